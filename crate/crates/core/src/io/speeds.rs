//! Link speed records and their conversion to flow observations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::net::{FlowVector, Network};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedRecord {
    /// 1-based link id as in the network file.
    pub link_id: usize,
    pub timestamp: NaiveDateTime,
    pub average_speed: f64,
    pub free_flow_speed: f64,
}

/// Greenshield flow `4 q_max (v/v_f)(1 - v/v_f)`. Speeds above `v_f` are
/// clamped to it and negative speeds to zero.
pub fn greenshield_flow<T: Scalar>(speed: T, free_flow_speed: T, capacity: T) -> Result<T> {
    if !(free_flow_speed > T::zero()) || !free_flow_speed.is_finite() {
        return Err(Error::NonPositiveFreeFlowSpeed {
            speed: free_flow_speed.as_f64(),
        });
    }
    let mut v = speed;
    if v > free_flow_speed {
        log::warn!("speed {speed} above free-flow speed {free_flow_speed}; clamped");
        v = free_flow_speed;
    }
    if v < T::zero() {
        log::warn!("negative speed {speed}; clamped to 0");
        v = T::zero();
    }
    let r = v / free_flow_speed;
    Ok(T::lit(4.0) * capacity * r * (T::one() - r))
}

/// Below half the free-flow speed the same flow also arises on the
/// uncongested side of the parabola.
pub fn is_congested(speed: f64, free_flow_speed: f64) -> bool {
    speed < 0.5 * free_flow_speed
}

#[derive(Deserialize)]
struct RawRecord {
    link_id: usize,
    timestamp: String,
    average_speed: f64,
    free_flow_speed: f64,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_local());
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads `link_id,timestamp,average_speed,free_flow_speed` rows.
pub fn read_speed_records(path: &Path) -> Result<Vec<SpeedRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RawRecord>().enumerate() {
        let line = i + 2;
        let r = row?;
        let timestamp = parse_timestamp(&r.timestamp).ok_or_else(|| Error::BadRow {
            line,
            column: 2,
            message: format!("unrecognised timestamp '{}'", r.timestamp),
        })?;
        if !(r.average_speed >= 0.0) {
            return Err(Error::BadRow {
                line,
                column: 3,
                message: format!("average speed must be nonnegative, got {}", r.average_speed),
            });
        }
        if !(r.free_flow_speed > 0.0) {
            return Err(Error::NonPositiveFreeFlowSpeed {
                speed: r.free_flow_speed,
            });
        }
        out.push(SpeedRecord {
            link_id: r.link_id,
            timestamp,
            average_speed: r.average_speed,
            free_flow_speed: r.free_flow_speed,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WindowKind {
    /// Weekday records with time of day in `[start, end)`; wraps midnight
    /// when `end <= start`.
    Weekday { start: NaiveTime, end: NaiveTime },
    /// Any record on Saturday or Sunday.
    Weekend,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeWindow {
    pub name: String,
    pub kind: WindowKind,
}

impl TimeWindow {
    pub fn contains(&self, t: &NaiveDateTime) -> bool {
        let weekend = matches!(t.weekday(), Weekday::Sat | Weekday::Sun);
        match &self.kind {
            WindowKind::Weekend => weekend,
            WindowKind::Weekday { start, end } => {
                if weekend {
                    return false;
                }
                let tod = t.time();
                if start < end {
                    *start <= tod && tod < *end
                } else {
                    tod >= *start || tod < *end
                }
            }
        }
    }
}

/// Comma-separated `NAME=HH:MM-HH:MM` or `NAME=weekend` entries, e.g.
/// `AM=07:00-09:00,MD=11:00-13:00,PM=16:00-18:00,NT=22:00-05:00,WD=weekend`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub windows: Vec<TimeWindow>,
}

impl WindowSpec {
    /// The five windows of the original study.
    pub fn standard() -> Self {
        "AM=07:00-09:00,MD=11:00-13:00,PM=16:00-18:00,NT=22:00-05:00,WD=weekend"
            .parse()
            .expect("valid builtin spec")
    }
}

impl FromStr for WindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::Config {
            key: "windows".into(),
            message: m,
        };
        let mut windows = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, range) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected NAME=RANGE, got '{part}'")))?;
            let name = name.trim().to_string();
            if name.is_empty() || name.contains(':') {
                return Err(bad(format!("bad window name '{name}'")));
            }
            if windows.iter().any(|w: &TimeWindow| w.name == name) {
                return Err(bad(format!("duplicate window '{name}'")));
            }
            let range = range.trim();
            let kind = if range.eq_ignore_ascii_case("weekend") {
                WindowKind::Weekend
            } else {
                let (a, b) = range
                    .split_once('-')
                    .ok_or_else(|| bad(format!("expected HH:MM-HH:MM, got '{range}'")))?;
                let t = |x: &str| {
                    NaiveTime::parse_from_str(x.trim(), "%H:%M")
                        .map_err(|_| bad(format!("bad time '{}'", x.trim())))
                };
                let (start, end) = (t(a)?, t(b)?);
                if start == end {
                    return Err(bad(format!("window '{name}' is empty")));
                }
                WindowKind::Weekday { start, end }
            };
            windows.push(TimeWindow { name, kind });
        }
        if windows.is_empty() {
            return Err(bad("no windows given".into()));
        }
        Ok(WindowSpec { windows })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GroupBy {
    /// One observation per window and calendar day.
    #[default]
    Day,
    /// One observation per window and calendar month.
    Month,
}

impl FromStr for GroupBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "day" => Ok(GroupBy::Day),
            "month" => Ok(GroupBy::Month),
            _ => Err(Error::Config {
                key: "group-by".into(),
                message: format!("expected day or month, got '{s}'"),
            }),
        }
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupBy::Day => "day",
            GroupBy::Month => "month",
        })
    }
}

fn group_key(t: &NaiveDateTime, by: GroupBy, window: &TimeWindow) -> String {
    // night windows that wrap midnight belong to the evening they start on
    let mut t = *t;
    if let WindowKind::Weekday { start, end } = window.kind {
        if end <= start && t.time() < end {
            t -= chrono::Duration::hours(t.hour() as i64 + 1);
        }
    }
    match by {
        GroupBy::Day => t.format("%Y-%m-%d").to_string(),
        GroupBy::Month => t.format("%Y-%m").to_string(),
    }
}

/// Flow observations built from speed records, one per (window, group).
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedObservations<T> {
    /// `window:group` per observation, windows in spec order, groups ascending.
    pub labels: Vec<String>,
    pub flows: Vec<FlowVector<T>>,
    /// Per observation, links whose mean speed sat on the congested branch.
    pub congested: Vec<Vec<usize>>,
}

impl<T> SpeedObservations<T> {
    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}

/// Averages Greenshield flows per link over each (window, group) cell.
///
/// Capacities come from the network. A link with no record in a cell takes
/// its mean over the whole window; a link with no record anywhere in a
/// window, or a window with no records at all, is an error.
pub fn aggregate_observations<T: Scalar>(
    network: &Network<T>,
    records: &[SpeedRecord],
    spec: &WindowSpec,
    group_by: GroupBy,
) -> Result<SpeedObservations<T>> {
    let n = network.link_count();
    for r in records {
        if r.link_id == 0 || r.link_id > n {
            return Err(Error::InvalidLink {
                link: r.link_id,
                reason: format!("speed record for link {} outside 1..={n}", r.link_id),
            });
        }
    }
    let mut out = SpeedObservations {
        labels: Vec::new(),
        flows: Vec::new(),
        congested: Vec::new(),
    };
    #[derive(Default, Clone, Copy)]
    struct Acc {
        flow: f64,
        speed: f64,
        vf: f64,
        count: usize,
    }
    for window in &spec.windows {
        let mut cells: BTreeMap<String, Vec<Acc>> = BTreeMap::new();
        let mut whole = vec![Acc::default(); n];
        for r in records.iter().filter(|r| window.contains(&r.timestamp)) {
            let link = r.link_id - 1;
            let cap = network.link(link).capacity.as_f64();
            let q = greenshield_flow(r.average_speed, r.free_flow_speed, cap)?;
            let cell = cells
                .entry(group_key(&r.timestamp, group_by, window))
                .or_insert_with(|| vec![Acc::default(); n]);
            for acc in [&mut cell[link], &mut whole[link]] {
                acc.flow += q;
                acc.speed += r.average_speed;
                acc.vf += r.free_flow_speed;
                acc.count += 1;
            }
        }
        if cells.is_empty() {
            return Err(Error::EmptyWindow {
                window: window.name.clone(),
            });
        }
        if let Some(missing) = whole.iter().position(|a| a.count == 0) {
            return Err(Error::EmptyWindow {
                window: format!("{} (no records for link {})", window.name, missing + 1),
            });
        }
        for (group, cell) in cells {
            let mut flows = Vec::with_capacity(n);
            let mut congested = Vec::new();
            for (i, acc) in cell.iter().enumerate() {
                let a = if acc.count == 0 { &whole[i] } else { acc };
                let c = a.count as f64;
                flows.push(T::lit(a.flow / c));
                if is_congested(a.speed / c, a.vf / c) {
                    congested.push(i + 1);
                }
            }
            out.labels.push(format!("{}:{group}", window.name));
            out.flows.push(FlowVector::new(flows)?);
            out.congested.push(congested);
        }
    }
    Ok(out)
}
