use std::path::PathBuf;

use thiserror::Error;

use crate::qp::KktResiduals;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // network construction and routing
    #[error("link {link}: {reason}")]
    InvalidLink { link: usize, reason: String },
    #[error("network is not strongly connected: node {to} is unreachable from node {from}")]
    NotStronglyConnected { from: usize, to: usize },
    #[error("node {node} is not part of the network")]
    UnknownNode { node: usize },
    #[error("OD pair {od} references a node outside the network")]
    InfeasibleDemand { od: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // latency
    #[error("negative congestion ratio {z}")]
    NegativeCongestionRatio { z: f64 },
    #[error("invalid latency function: {0}")]
    InvalidLatency(String),

    // equilibrium
    #[error("assignment did not converge after {iterations} iterations (relative gap {rel_gap:.3e})")]
    NotConverged {
        iterations: usize,
        rel_gap: f64,
        flows: Vec<f64>,
    },
    #[error("total latency x·t(x) is not convex on link {link}")]
    NonConvexObjective { link: usize },
    #[error("social cost is zero; price of anarchy is undefined")]
    ZeroSocialCost,

    // quadratic programs
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("quadratic program is unbounded below")]
    Unbounded,
    #[error("quadratic program hit the iteration limit ({iterations}) with residuals {residuals}")]
    MaxIterations {
        iterations: usize,
        residuals: KktResiduals,
        x: Vec<f64>,
    },

    // estimation
    #[error("no observations supplied")]
    EmptyObservations,
    #[error("need at least {needed} observations, found {found}")]
    InsufficientObservations { needed: usize, found: usize },
    #[error("sample statistics need at least two samples, found {found}")]
    TooFewSamples { found: usize },

    // sensitivity
    #[error("perturbed free-flow time on link {link} would be {value} (must stay positive)")]
    NonPositivePerturbedTime { link: usize, value: f64 },
    #[error("network carries no zone labels")]
    MissingZoneLabels,

    // ingestion
    #[error("{path}: malformed header: {message}")]
    MalformedHeader { path: PathBuf, message: String },
    #[error("line {line}, column {column}: {message}")]
    BadRow {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: unknown zone {zone}")]
    UnknownZone { line: usize, zone: usize },
    #[error("line {line}: malformed block: {message}")]
    MalformedBlock { line: usize, message: String },
    #[error("free-flow speed must be positive, got {speed}")]
    NonPositiveFreeFlowSpeed { speed: f64 },
    #[error("window {window} has no records")]
    EmptyWindow { window: String },
    #[error("config key {key}: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    NonConvergence,
    Infeasibility,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NotConverged { .. } | Error::MaxIterations { .. } => ErrorClass::NonConvergence,
            Error::Infeasible | Error::Unbounded | Error::InfeasibleDemand { .. } => {
                ErrorClass::Infeasibility
            }
            _ => ErrorClass::Input,
        }
    }
}
