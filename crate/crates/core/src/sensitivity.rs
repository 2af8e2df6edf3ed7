//! Sensitivity of the equilibrium objective to link parameters, and
//! summary metrics over equilibrium flows.
//!
//! `V(t⁰, m)` is the Beckmann objective at the user equilibrium. Because
//! the equilibrium minimizes it over a parameter-independent feasible set,
//! its partial derivatives are those of the integrand at fixed flows:
//! `∂V/∂tₐ⁰ = ∫₀^{xₐ} f(s/mₐ) ds` and
//! `∂V/∂mₐ = −(tₐ⁰/mₐ²) ∫₀^{xₐ} s ḟ(s/mₐ) ds`.
//! Finite differences re-solve the equilibrium with one link perturbed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{solve_ue, total_latency, SolverSettings};
use crate::error::{Error, Result};
use crate::latency::LatencyFunction;
use crate::net::{DemandVector, Network};
use crate::scalar::Scalar;

/// `(∂V/∂tₐ⁰, ∂V/∂mₐ)` per link at the given equilibrium flows.
pub fn analytic_sensitivities<T: Scalar>(
    network: &Network<T>,
    ue_flows: &[T],
    f: &LatencyFunction<T>,
) -> Result<Vec<(T, T)>> {
    network.check_len("flows", ue_flows.len())?;
    Ok(network
        .links()
        .iter()
        .zip(ue_flows)
        .map(|(l, &x)| {
            let z = x / l.capacity;
            // substituting s = m·u
            (l.capacity * f.integral(z), -l.free_flow_time * f.weighted_slope_integral(z))
        })
        .collect())
}

/// Beckmann value at equilibrium, with the absolute gap of the solve as an
/// upper bound on its error.
fn equilibrium_value<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
    settings: &SolverSettings,
) -> Result<(T, T)> {
    let r = solve_ue(network, demand, f, settings)?;
    let abs_gap = r.final_rel_gap * total_latency(network, &r.flows, f)?;
    Ok((r.objective, abs_gap))
}

fn perturbed_freeflow<T: Scalar>(network: &Network<T>, link: usize, delta: T) -> Result<Network<T>> {
    if link >= network.link_count() {
        return Err(Error::InvalidArgument(format!("no link with index {link}")));
    }
    let mut t0 = network.free_flow_times();
    let value = t0[link] + delta;
    if !(value > T::zero()) {
        return Err(Error::NonPositivePerturbedTime {
            link,
            value: value.as_f64(),
        });
    }
    t0[link] = value;
    network.with_link_parameters(&t0, &network.capacities())
}

fn perturbed_capacity<T: Scalar>(network: &Network<T>, link: usize, delta: T) -> Result<Network<T>> {
    if link >= network.link_count() {
        return Err(Error::InvalidArgument(format!("no link with index {link}")));
    }
    let mut m = network.capacities();
    if !(m[link] + delta > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "capacity perturbation {delta} leaves link {link} without capacity"
        )));
    }
    m[link] += delta;
    network.with_link_parameters(&network.free_flow_times(), &m)
}

/// `V(base) − V(tₐ⁰ + Δt⁰)`.
pub fn delta_v_freeflow<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
    link: usize,
    delta_t0: T,
    settings: &SolverSettings,
) -> Result<T> {
    let perturbed = perturbed_freeflow(network, link, delta_t0)?;
    let (base, _) = equilibrium_value(network, demand, f, settings)?;
    let (pert, _) = equilibrium_value(&perturbed, demand, f, settings)?;
    Ok(base - pert)
}

/// `V(base) − V(mₐ + Δm)`.
pub fn delta_v_capacity<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
    link: usize,
    delta_m: T,
    settings: &SolverSettings,
) -> Result<T> {
    let perturbed = perturbed_capacity(network, link, delta_m)?;
    let (base, _) = equilibrium_value(network, demand, f, settings)?;
    let (pert, _) = equilibrium_value(&perturbed, demand, f, settings)?;
    Ok(base - pert)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityRow<T> {
    /// One-based link id.
    pub link_id: usize,
    #[serde(rename = "dV_dt0")]
    pub dv_dt0: T,
    #[serde(rename = "dV_dm")]
    pub dv_dm: T,
    #[serde(rename = "deltaV_t0")]
    pub delta_v_t0: T,
    #[serde(rename = "deltaV_m")]
    pub delta_v_m: T,
    /// Bounds on how negative the two differences can be from solver error
    /// alone (absolute gaps of the perturbed solves).
    #[serde(skip)]
    pub tolerance_t0: T,
    #[serde(skip)]
    pub tolerance_m: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport<T> {
    pub rows: Vec<SensitivityRow<T>>,
    pub delta_t0: T,
    pub delta_m: T,
    pub base_value: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbations<T> {
    pub delta_t0: T,
    pub delta_m: T,
}

impl<T: Scalar> Perturbations<T> {
    /// `Δt⁰ = −frac·minₐ tₐ⁰` and `Δm = +frac·minₐ mₐ`.
    pub fn from_fraction(network: &Network<T>, frac: T) -> Result<Self> {
        if !(frac > T::zero() && frac < T::one()) {
            return Err(Error::InvalidArgument(format!("perturbation fraction must lie in (0, 1), got {frac}")));
        }
        let min = |v: Vec<T>| v.into_iter().fold(T::infinity(), T::min);
        Ok(Self {
            delta_t0: -frac * min(network.free_flow_times()),
            delta_m: frac * min(network.capacities()),
        })
    }
}

/// Analytic partials at the base equilibrium plus both finite differences
/// for every link. Base and perturbed solves share `settings`.
pub fn sensitivity_report<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
    perturbations: Perturbations<T>,
    settings: &SolverSettings,
) -> Result<SensitivityReport<T>> {
    let base = solve_ue(network, demand, f, settings)?;
    let partials = analytic_sensitivities(network, &base.flows, f)?;
    let base_value = base.objective;
    let rows: Vec<Result<SensitivityRow<T>>> = (0..network.link_count())
        .into_par_iter()
        .map(|a| {
            let (vt, gt) = equilibrium_value(&perturbed_freeflow(network, a, perturbations.delta_t0)?, demand, f, settings)?;
            let (vm, gm) = equilibrium_value(&perturbed_capacity(network, a, perturbations.delta_m)?, demand, f, settings)?;
            Ok(SensitivityRow {
                link_id: a + 1,
                dv_dt0: partials[a].0,
                dv_dm: partials[a].1,
                delta_v_t0: base_value - vt,
                delta_v_m: base_value - vm,
                tolerance_t0: gt,
                tolerance_m: gm,
            })
        })
        .collect();
    Ok(SensitivityReport {
        rows: rows.into_iter().collect::<Result<_>>()?,
        delta_t0: perturbations.delta_t0,
        delta_m: perturbations.delta_m,
        base_value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankBy {
    FreeFlow,
    Capacity,
}

impl std::str::FromStr for RankBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeflow" | "free-flow" | "t0" => Ok(Self::FreeFlow),
            "capacity" | "m" => Ok(Self::Capacity),
            other => Err(Error::InvalidArgument(format!("unknown ranking '{other}'"))),
        }
    }
}

/// Link ids by descending `ΔV`, ties by ascending id.
pub fn rank_links<T: Scalar>(report: &SensitivityReport<T>, by: RankBy, top_k: usize) -> Vec<usize> {
    let key = |r: &SensitivityRow<T>| match by {
        RankBy::FreeFlow => r.delta_v_t0,
        RankBy::Capacity => r.delta_v_m,
    };
    let mut rows: Vec<&SensitivityRow<T>> = report.rows.iter().collect();
    rows.sort_by(|a, b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.link_id.cmp(&b.link_id))
    });
    rows.into_iter().take(top_k).map(|r| r.link_id).collect()
}

/// `CMₐ = f(xₐ/mₐ)`, travel time over free-flow time.
pub fn congestion_metric<T: Scalar>(network: &Network<T>, flows: &[T], f: &LatencyFunction<T>) -> Result<Vec<T>> {
    network.check_len("flows", flows.len())?;
    network
        .links()
        .iter()
        .zip(flows)
        .map(|(l, &x)| f.evaluate(x / l.capacity))
        .collect()
}

/// `Cᵢ = Σ_{a∈Aᵢ} xₐ tₐ(xₐ)` where `Aᵢ` holds the links with an endpoint
/// in zone `i`. A link joining two zones counts fully toward both.
pub fn zone_costs<T: Scalar>(
    network: &Network<T>,
    flows: &[T],
    f: &LatencyFunction<T>,
) -> Result<BTreeMap<String, T>> {
    network.check_len("flows", flows.len())?;
    if !network.has_zones() {
        return Err(Error::MissingZoneLabels);
    }
    let mut costs: BTreeMap<String, T> = BTreeMap::new();
    for node in 0..network.node_count() {
        if let Some(z) = network.zone_of(node) {
            costs.entry(z.to_string()).or_insert_with(T::zero);
        }
    }
    for (l, &x) in network.links().iter().zip(flows) {
        let cost = x * crate::latency::link_latency(l, x, f)?;
        let tail = network.zone_of(l.tail);
        let head = network.zone_of(l.head);
        if let Some(z) = tail {
            *costs.get_mut(z).expect("zone registered") += cost;
        }
        if let Some(z) = head {
            if tail != Some(z) {
                *costs.get_mut(z).expect("zone registered") += cost;
            }
        }
    }
    Ok(costs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowExtremes<T> {
    pub max: T,
    /// One-based link id.
    pub argmax: usize,
    pub min: T,
    pub argmin: usize,
}

/// Largest and smallest link flow; the lowest id wins ties.
pub fn flow_extremes<T: Scalar>(flows: &[T]) -> Result<FlowExtremes<T>> {
    if flows.is_empty() {
        return Err(Error::InvalidArgument("no flows".into()));
    }
    let (mut hi, mut lo) = (0, 0);
    for (a, &x) in flows.iter().enumerate() {
        if x > flows[hi] {
            hi = a;
        }
        if x < flows[lo] {
            lo = a;
        }
    }
    Ok(FlowExtremes {
        max: flows[hi],
        argmax: hi + 1,
        min: flows[lo],
        argmin: lo + 1,
    })
}
