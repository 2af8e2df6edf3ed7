//! File formats: TNTP networks and trip tables, link speed CSVs, flow and
//! demand tables, run configuration and reports.

pub mod config;
pub mod csvio;
pub mod report;
pub mod speeds;
pub mod tntp;

pub use config::{parse_list, RunConfig};
pub use csvio::{read_demand, read_flow_files, read_flow_table, read_latency, read_zones, write_demand, write_flow_table, FlowTable};
pub use report::{emit_report, fmt_sig, round_sig, to_json, Format};
pub use speeds::{aggregate_observations, greenshield_flow, read_speed_records, GroupBy, SpeedObservations, SpeedRecord, WindowSpec};
pub use tntp::{parse_tntp_network, parse_tntp_trips, write_tntp_network, TntpNetwork, TripTable};
