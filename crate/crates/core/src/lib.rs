//! Price-of-anarchy estimation for road networks.
//!
//! The crate recovers a shared link latency function from observed
//! equilibrium flows, estimates and calibrates OD demand, solves the user
//! equilibrium and social optimum, and ranks links by how much the
//! equilibrium objective responds to free-flow time and capacity changes.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`, which the default tolerances assume.

// `!(a > b)` is how NaN is rejected throughout
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod equilibrium;
pub mod error;
pub mod inverse_vi;
pub mod io;
pub mod latency;
pub mod linalg;
pub mod net;
pub mod od_adjust;
pub mod od_estimate;
pub mod qp;
pub mod scalar;
pub mod sensitivity;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub type Network = net::Network<f64>;
pub type Link = net::Link<f64>;
pub type LinkSpec = net::LinkSpec<f64>;
pub type DemandVector = net::DemandVector<f64>;
pub type FlowVector = net::FlowVector<f64>;
pub type LatencyFunction = latency::LatencyFunction<f64>;
pub type EquilibriumResult = equilibrium::EquilibriumResult<f64>;
pub type ObservationSet = inverse_vi::ObservationSet<f64>;
pub type InverseViSolution = inverse_vi::InverseViSolution<f64>;
pub type QuadraticProgram = qp::QuadraticProgram<f64>;
pub type SampleStatistics = od_estimate::SampleStatistics<f64>;
pub type SensitivityReport = sensitivity::SensitivityReport<f64>;

pub type Network32 = net::Network<f32>;
pub type LatencyFunction32 = latency::LatencyFunction<f32>;
