//! User equilibrium and social optimum assignment.
//!
//! Both problems minimize a separable convex objective over the set of
//! demand-feasible link flows. The Frank-Wolfe rules keep every iterate a
//! convex combination of all-or-nothing loadings; gradient projection works
//! on route flows directly. The social optimum is the user equilibrium under marginal
//! link costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{beckmann_term, LatencyFunction};
use rayon::prelude::*;

use crate::net::{assign_all_or_nothing, fastest_routes, DemandVector, FlowVector, Link, Network, Route, ShortestPathTree};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Method of successive averages, step `1/(k+1)`.
    Msa,
    /// Frank-Wolfe with the exact minimizer along the search segment.
    ExactLineSearch,
    /// Conjugate Frank-Wolfe directions with exact line search.
    Conjugate,
    /// Path-based gradient projection: per OD pair, Newton flow shifts from
    /// costlier routes onto the current fastest one.
    GradientProjection,
}

impl std::str::FromStr for StepRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msa" => Ok(Self::Msa),
            "exact_line_search" | "fw" => Ok(Self::ExactLineSearch),
            "conjugate" | "cfw" => Ok(Self::Conjugate),
            "gradient_projection" | "gp" => Ok(Self::GradientProjection),
            other => Err(Error::InvalidArgument(format!("unknown step rule {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub rel_gap_tol: f64,
    pub step_rule: StepRule,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            rel_gap_tol: 1e-4,
            step_rule: StepRule::Msa,
        }
    }
}

impl SolverSettings {
    pub fn new(max_iterations: usize, rel_gap_tol: f64, step_rule: StepRule) -> Self {
        Self {
            max_iterations,
            rel_gap_tol,
            step_rule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.rel_gap_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rel_gap_tol must be positive, got {}",
                self.rel_gap_tol
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Beckmann,
    TotalLatency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumResult<T> {
    pub flows: FlowVector<T>,
    pub iterations: usize,
    pub final_rel_gap: T,
    /// Beckmann value for user equilibria, total latency for social optima.
    pub objective: T,
    pub objective_kind: ObjectiveKind,
    pub converged: bool,
}

impl<T: Scalar> Serialize for EquilibriumResult<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("EquilibriumResult", 4)?;
        st.serialize_field("flows", self.flows.as_slice())?;
        st.serialize_field("iterations", &self.iterations)?;
        st.serialize_field("rel_gap", &self.final_rel_gap)?;
        st.serialize_field("objective", &self.objective)?;
        st.end()
    }
}

/// Separable link cost driving route choice, with its objective integral.
pub trait CostModel<T: Scalar>: Sync {
    /// Unit cost of link `link` at flow `x`.
    fn cost(&self, link: &Link<T>, x: T) -> T;
    /// Derivative of [`CostModel::cost`] in `x`.
    fn cost_slope(&self, link: &Link<T>, x: T) -> T;
    /// `∫₀^x cost(s) ds`
    fn objective_term(&self, link: &Link<T>, x: T) -> T;
}

/// Drivers minimize their own latency.
pub struct UserCost<'a, T>(pub &'a LatencyFunction<T>);

/// Drivers are charged their marginal social cost.
pub struct SocialCost<'a, T>(pub &'a LatencyFunction<T>);

impl<T: Scalar> CostModel<T> for UserCost<'_, T> {
    fn cost(&self, link: &Link<T>, x: T) -> T {
        link.free_flow_time * self.0.value(x / link.capacity)
    }
    fn cost_slope(&self, link: &Link<T>, x: T) -> T {
        link.free_flow_time / link.capacity * self.0.slope(x / link.capacity)
    }
    fn objective_term(&self, link: &Link<T>, x: T) -> T {
        link.free_flow_time * link.capacity * self.0.integral(x / link.capacity)
    }
}

impl<T: Scalar> CostModel<T> for SocialCost<'_, T> {
    fn cost(&self, link: &Link<T>, x: T) -> T {
        let z = x / link.capacity;
        link.free_flow_time * (self.0.value(z) + z * self.0.slope(z))
    }
    fn cost_slope(&self, link: &Link<T>, x: T) -> T {
        let z = x / link.capacity;
        link.free_flow_time / link.capacity
            * (T::lit(2.0) * self.0.slope(z) + z * self.0.curvature(z))
    }
    fn objective_term(&self, link: &Link<T>, x: T) -> T {
        x * link.free_flow_time * self.0.value(x / link.capacity)
    }
}

/// Link costs at `flows`, floored at a tiny positive value so that shortest
/// path searches stay well defined for estimated functions dipping below 0.
pub fn link_costs<T: Scalar, M: CostModel<T>>(network: &Network<T>, model: &M, flows: &[T]) -> Vec<T> {
    network
        .links()
        .iter()
        .zip(flows)
        .map(|(l, &x)| {
            let c = model.cost(l, x);
            c.max(l.free_flow_time * T::lit(1e-12))
        })
        .collect()
}

fn objective<T: Scalar, M: CostModel<T>>(network: &Network<T>, model: &M, flows: &[T]) -> T {
    network
        .links()
        .iter()
        .zip(flows)
        .map(|(l, &x)| model.objective_term(l, x))
        .sum()
}

/// Exact minimizer of the objective on `x + α d`, `α ∈ [0, 1]`.
fn line_search<T: Scalar, M: CostModel<T>>(network: &Network<T>, model: &M, x: &[T], d: &[T]) -> T {
    let derivative = |alpha: T| -> (T, T) {
        let mut g = T::zero();
        let mut h = T::zero();
        for ((l, &xa), &da) in network.links().iter().zip(x).zip(d) {
            if da == T::zero() {
                continue;
            }
            let at = (xa + alpha * da).max(T::zero());
            g += da * model.cost(l, at);
            h += da * da * model.cost_slope(l, at);
        }
        (g, h)
    };
    let (g0, _) = derivative(T::zero());
    if g0 >= T::zero() {
        return T::zero();
    }
    let (g1, _) = derivative(T::one());
    if g1 <= T::zero() {
        return T::one();
    }
    // safeguarded Newton on the monotone derivative
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut alpha = g0 / (g0 - g1);
    for _ in 0..100 {
        let (g, h) = derivative(alpha);
        if g == T::zero() {
            return alpha;
        }
        if g < T::zero() {
            lo = alpha;
        } else {
            hi = alpha;
        }
        if hi - lo <= T::lit(4.0) * T::EPS {
            break;
        }
        let newton = alpha - g / h;
        alpha = if h > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) * T::lit(0.5)
        };
        if (newton - alpha).abs() <= T::EPS && h > T::zero() {
            break;
        }
    }
    alpha
}

/// Runs the configured solver and returns the final state whether or not the
/// gap tolerance was reached. Deterministic for fixed inputs.
pub fn run_assignment<T: Scalar, M: CostModel<T>>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    model: &M,
    kind: ObjectiveKind,
    settings: &SolverSettings,
) -> Result<EquilibriumResult<T>> {
    Ok(run_inner(network, demand, model, kind, settings, false)?.0)
}

/// Route flows behind a link flow vector: every iterate is a convex
/// combination of all-or-nothing loadings, and each loading puts an OD
/// pair's demand on one route.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteFlows<T> {
    /// Per OD pair, `(route, flow)` with routes in first-use order.
    pub per_od: Vec<Vec<(Route, T)>>,
}

impl<T: Scalar> RouteFlows<T> {
    fn loading(routes: Vec<Route>, demand: &DemandVector<T>) -> Self {
        Self {
            per_od: routes
                .into_iter()
                .enumerate()
                .map(|(w, r)| if demand[w] > T::zero() { vec![(r, demand[w])] } else { Vec::new() })
                .collect(),
        }
    }

    /// `(1 − α)·self + α·other`, merging identical routes.
    fn blend(&mut self, other: &Self, alpha: T) {
        for (mine, theirs) in self.per_od.iter_mut().zip(&other.per_od) {
            for (_, v) in mine.iter_mut() {
                *v *= T::one() - alpha;
            }
            for (r, v) in theirs {
                let add = alpha * *v;
                match mine.iter_mut().find(|(q, _)| q.links == r.links) {
                    Some((_, w)) => *w += add,
                    None if add > T::zero() => mine.push((r.clone(), add)),
                    None => {}
                }
            }
            mine.retain(|(_, v)| *v > T::zero());
        }
    }

    /// Link flows implied by the route flows.
    pub fn link_flows(&self, link_count: usize) -> Vec<T> {
        let mut x = vec![T::zero(); link_count];
        for (r, v) in self.per_od.iter().flatten() {
            for &a in &r.links {
                x[a] += *v;
            }
        }
        x
    }

    /// Per OD pair, max minus min route cost under `costs` over routes whose
    /// flow is at least `min_share` of the OD's total route flow. Zero for
    /// OD pairs with a single used route or no flow.
    pub fn cost_spread(&self, costs: &[T], min_share: T) -> Vec<T> {
        self.per_od
            .iter()
            .map(|routes| {
                let total: T = routes.iter().map(|(_, v)| *v).sum();
                let used: Vec<T> = routes
                    .iter()
                    .filter(|(_, v)| *v >= min_share * total)
                    .map(|(r, _)| r.weight(costs))
                    .collect();
                let hi = used.iter().copied().fold(T::neg_infinity(), T::max);
                let lo = used.iter().copied().fold(T::infinity(), T::min);
                if used.len() < 2 { T::zero() } else { hi - lo }
            })
            .collect()
    }
}

/// [`solve_ue`] that also returns the route flows the solution is made of.
pub fn solve_ue_with_routes<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
    settings: &SolverSettings,
) -> Result<(EquilibriumResult<T>, RouteFlows<T>)> {
    check_inputs(network, demand)?;
    let (r, routes) = run_inner(network, demand, &UserCost(f), ObjectiveKind::Beckmann, settings, true)?;
    Ok((into_converged(r)?, routes.expect("tracked")))
}

fn run_inner<T: Scalar, M: CostModel<T>>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    model: &M,
    kind: ObjectiveKind,
    settings: &SolverSettings,
    track: bool,
) -> Result<(EquilibriumResult<T>, Option<RouteFlows<T>>)> {
    settings.validate()?;
    network.check_od_len("demand", demand.len())?;
    if settings.step_rule == StepRule::GradientProjection {
        let (r, routes) = run_gradient_projection(network, demand, model, kind, settings)?;
        return Ok((r, track.then_some(routes)));
    }
    let n = network.link_count();
    let tol = T::lit(settings.rel_gap_tol);

    let zero = vec![T::zero(); n];
    let c0 = link_costs(network, model, &zero);
    let mut x = assign_all_or_nothing(network, demand, &c0)?.into_vec();
    let mut routes = if track {
        Some(RouteFlows::loading(fastest_routes(network, &c0)?, demand))
    } else {
        None
    };
    let mut conj_routes: Option<RouteFlows<T>> = None;
    let mut best: Option<(T, Vec<T>, usize, Option<RouteFlows<T>>)> = None;
    let mut conj_point: Option<Vec<T>> = None;
    let mut gap = T::zero();
    let mut iterations = 0;
    let mut converged = false;

    for k in 1..=settings.max_iterations {
        iterations = k;
        let costs = link_costs(network, model, &x);
        let y = assign_all_or_nothing(network, demand, &costs)?.into_vec();
        let tx = dot(&costs, &x);
        let ty = dot(&costs, &y);
        gap = if tx > T::zero() {
            ((tx - ty) / tx).max(T::zero())
        } else {
            T::zero()
        };
        if best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, x.clone(), k, routes.clone()));
        }
        if gap <= tol {
            converged = true;
            break;
        }
        if k == settings.max_iterations {
            break;
        }
        let y_routes = if track {
            Some(RouteFlows::loading(fastest_routes(network, &costs)?, demand))
        } else {
            None
        };
        let (target, target_routes) = match settings.step_rule {
            StepRule::Conjugate => {
                let (s, w) = conjugate_point(network, model, &x, &y, conj_point.as_deref());
                conj_point = Some(s.clone());
                let tr = y_routes.map(|yr| match conj_routes.take() {
                    Some(mut prev) if w > T::zero() => {
                        prev.blend(&yr, T::one() - w);
                        prev
                    }
                    _ => yr,
                });
                conj_routes = tr.clone();
                (s, tr)
            }
            _ => (y, y_routes),
        };
        let d: Vec<T> = target.iter().zip(&x).map(|(&t, &v)| t - v).collect();
        let alpha = match settings.step_rule {
            StepRule::Msa => T::one() / T::from_usize_lossy(k + 1),
            _ => line_search(network, model, &x, &d),
        };
        if alpha == T::zero() && settings.step_rule == StepRule::Conjugate {
            // conjugate direction stalled; restart from the plain FW direction
            conj_point = None;
            conj_routes = None;
        }
        for (v, &dv) in x.iter_mut().zip(&d) {
            *v = (*v + alpha * dv).max(T::zero());
        }
        if let (Some(r), Some(tr)) = (routes.as_mut(), target_routes.as_ref()) {
            r.blend(tr, alpha);
        }
    }

    if !converged {
        if let Some((g, bx, k, br)) = best {
            log::debug!("returning best iterate {k} with gap {g}");
            gap = g;
            x = bx;
            routes = br;
        }
    }
    let obj = objective(network, model, &x);
    Ok((
        EquilibriumResult {
            flows: FlowVector::from_vec_clamped(x),
            iterations,
            final_rel_gap: gap,
            objective: obj,
            objective_kind: kind,
            converged,
        },
        routes,
    ))
}

fn path_cost<T: Scalar, M: CostModel<T>>(network: &Network<T>, model: &M, x: &[T], links: &[usize]) -> T {
    links.iter().map(|&a| model.cost(network.link(a), x[a])).sum()
}

fn run_gradient_projection<T: Scalar, M: CostModel<T>>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    model: &M,
    kind: ObjectiveKind,
    settings: &SolverSettings,
) -> Result<(EquilibriumResult<T>, RouteFlows<T>)> {
    let n = network.link_count();
    let tol = T::lit(settings.rel_gap_tol);
    let c0 = link_costs(network, model, &vec![T::zero(); n]);
    let mut routes = RouteFlows::loading(fastest_routes(network, &c0)?, demand);
    let mut x = routes.link_flows(n);
    let mut best: Option<(T, Vec<T>, usize, RouteFlows<T>)> = None;
    let mut gap = T::zero();
    let mut iterations = 0;
    let mut converged = false;

    for k in 1..=settings.max_iterations {
        iterations = k;
        // rebuilt from route flows so incremental updates cannot drift
        x = routes.link_flows(n);
        let costs = link_costs(network, model, &x);
        let trees: Vec<ShortestPathTree<T>> = network
            .ods_by_origin()
            .par_iter()
            .map(|(origin, _)| ShortestPathTree::compute(network, &costs, *origin))
            .collect();
        let mut ty = T::zero();
        for ((_, ods), tree) in network.ods_by_origin().iter().zip(&trees) {
            for &w in ods {
                if demand[w] > T::zero() {
                    let dest = network.od_pair(w).destination;
                    ty += demand[w] * tree.distance(dest).ok_or(Error::InfeasibleDemand { od: w })?;
                }
            }
        }
        let tx = dot(&costs, &x);
        gap = if tx > T::zero() {
            ((tx - ty) / tx).max(T::zero())
        } else {
            T::zero()
        };
        if best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, x.clone(), k, routes.clone()));
        }
        // a small gap can hide a lightly used route well above the minimum,
        // so every route carrying flow must also be within tol of it
        let mut excess = T::zero();
        for ((_, ods), tree) in network.ods_by_origin().iter().zip(&trees) {
            for &w in ods {
                let Some(min) = tree.distance(network.od_pair(w).destination) else {
                    continue;
                };
                for (r, v) in &routes.per_od[w] {
                    if *v > T::zero() && min > T::zero() {
                        excess = excess.max((r.weight(&costs) - min) / min);
                    }
                }
            }
        }
        if gap <= tol && excess <= tol {
            converged = true;
            break;
        }
        if k == settings.max_iterations {
            break;
        }
        for ((_, ods), tree) in network.ods_by_origin().iter().zip(&trees) {
            for &w in ods {
                if !(demand[w] > T::zero()) {
                    continue;
                }
                let dest = network.od_pair(w).destination;
                let sp = tree.path_to(network, dest).ok_or(Error::InfeasibleDemand { od: w })?;
                let set = &mut routes.per_od[w];
                let star = match set.iter().position(|(r, _)| r.links == sp) {
                    Some(i) => i,
                    None => {
                        set.push((Route { od_index: w, links: sp }, T::zero()));
                        set.len() - 1
                    }
                };
                for i in 0..set.len() {
                    if i == star || !(set[i].1 > T::zero()) {
                        continue;
                    }
                    let (p, s) = (&set[i].0.links, &set[star].0.links);
                    let diff = path_cost(network, model, &x, p) - path_cost(network, model, &x, s);
                    if !(diff > T::zero()) {
                        continue;
                    }
                    let den: T = p
                        .iter()
                        .filter(|a| !s.contains(a))
                        .chain(s.iter().filter(|a| !p.contains(a)))
                        .map(|&a| model.cost_slope(network.link(a), x[a]))
                        .sum();
                    let mut delta = if den > T::zero() { diff / den } else { set[i].1 };
                    delta = delta.min(set[i].1);
                    for &a in p.iter().filter(|a| !s.contains(a)) {
                        x[a] = (x[a] - delta).max(T::zero());
                    }
                    for &a in s.iter().filter(|a| !p.contains(a)) {
                        x[a] += delta;
                    }
                    set[i].1 -= delta;
                    set[star].1 += delta;
                }
                set.retain(|(_, v)| *v > T::zero());
            }
        }
    }

    if !converged {
        if let Some((g, bx, k, br)) = best {
            log::debug!("returning best iterate {k} with gap {g}");
            gap = g;
            x = bx;
            routes = br;
        }
    }
    let obj = objective(network, model, &x);
    Ok((
        EquilibriumResult {
            flows: FlowVector::from_vec_clamped(x),
            iterations,
            final_rel_gap: gap,
            objective: obj,
            objective_kind: kind,
            converged,
        },
        routes,
    ))
}

/// Conjugate target point: a convex combination of the previous target and
/// the new all-or-nothing point, conjugate to the previous direction with
/// respect to the objective Hessian at `x`.
fn conjugate_point<T: Scalar, M: CostModel<T>>(
    network: &Network<T>,
    model: &M,
    x: &[T],
    y: &[T],
    prev: Option<&[T]>,
) -> (Vec<T>, T) {
    let Some(prev) = prev else {
        return (y.to_vec(), T::zero());
    };
    let mut num = T::zero();
    let mut den = T::zero();
    for (i, l) in network.links().iter().enumerate() {
        let h = model.cost_slope(l, x[i]);
        let dprev = prev[i] - x[i];
        num += dprev * h * (y[i] - x[i]);
        den += dprev * h * (y[i] - prev[i]);
    }
    let cap = T::one() - T::lit(0.01);
    let weight = if den != T::zero() {
        let w = num / den;
        if w.is_finite() {
            w.max(T::zero()).min(cap)
        } else {
            T::zero()
        }
    } else {
        T::zero()
    };
    let point = prev
        .iter()
        .zip(y)
        .map(|(&p, &v)| weight * p + (T::one() - weight) * v)
        .collect();
    (point, weight)
}

fn check_inputs<T: Scalar>(network: &Network<T>, demand: &DemandVector<T>) -> Result<()> {
    network.check_od_len("demand", demand.len())?;
    for (i, od) in network.od_pairs().iter().enumerate() {
        if od.origin >= network.node_count() || od.destination >= network.node_count() {
            return Err(Error::InfeasibleDemand { od: i });
        }
    }
    Ok(())
}

fn max_ratio<T: Scalar>(network: &Network<T>, flows: &[T]) -> T {
    network
        .links()
        .iter()
        .zip(flows)
        .fold(T::zero(), |m, (l, &x)| m.max(x / l.capacity))
}

fn into_converged<T: Scalar>(r: EquilibriumResult<T>) -> Result<EquilibriumResult<T>> {
    if r.converged {
        Ok(r)
    } else {
        Err(Error::NotConverged {
            iterations: r.iterations,
            rel_gap: r.final_rel_gap.as_f64(),
            flows: r.flows.iter().map(|v| v.as_f64()).collect(),
        })
    }
}

/// User equilibrium: minimizes the Beckmann objective `Σₐ ∫₀^{xₐ} tₐ(s) ds`.
pub fn solve_ue<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
    settings: &SolverSettings,
) -> Result<EquilibriumResult<T>> {
    check_inputs(network, demand)?;
    let r = run_assignment(network, demand, &UserCost(f), ObjectiveKind::Beckmann, settings)?;
    let range = LatencyFunction::<T>::check_range(max_ratio(network, &r.flows));
    if !f.is_monotone_on(range) {
        log::warn!("latency function decreases on [0, {range}]; equilibrium may not be unique");
    }
    into_converged(r)
}

/// Social optimum: minimizes total latency `Σₐ xₐ tₐ(xₐ)` by solving the
/// equilibrium problem under marginal costs.
pub fn solve_so<T: Scalar>(
    network: &Network<T>,
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
    settings: &SolverSettings,
) -> Result<EquilibriumResult<T>> {
    check_inputs(network, demand)?;
    let r = run_assignment(
        network,
        demand,
        &SocialCost(f),
        ObjectiveKind::TotalLatency,
        settings,
    )?;
    let range = LatencyFunction::<T>::check_range(max_ratio(network, &r.flows));
    if !f.is_total_cost_convex_on(range) {
        let link = network
            .links()
            .iter()
            .zip(r.flows.iter())
            .max_by(|a, b| (*a.1 / a.0.capacity).partial_cmp(&(*b.1 / b.0.capacity)).unwrap())
            .map_or(0, |(l, _)| l.id);
        return Err(Error::NonConvexObjective { link });
    }
    into_converged(r)
}

/// `Σₐ xₐ tₐ(xₐ)`, vehicle-hours.
pub fn total_latency<T: Scalar>(network: &Network<T>, flows: &[T], f: &LatencyFunction<T>) -> Result<T> {
    network.check_len("flows", flows.len())?;
    network
        .links()
        .iter()
        .zip(flows)
        .map(|(l, &x)| Ok(x * crate::latency::link_latency(l, x, f)?))
        .sum()
}

/// Beckmann objective at `flows`.
pub fn beckmann_value<T: Scalar>(network: &Network<T>, flows: &[T], f: &LatencyFunction<T>) -> Result<T> {
    network.check_len("flows", flows.len())?;
    network
        .links()
        .iter()
        .zip(flows)
        .map(|(l, &x)| beckmann_term(l, x, f))
        .sum()
}

/// `L(user) / L(social)`.
pub fn price_of_anarchy<T: Scalar>(
    network: &Network<T>,
    user_flows: &[T],
    social_flows: &[T],
    f: &LatencyFunction<T>,
) -> Result<T> {
    let social = total_latency(network, social_flows, f)?;
    if !(social > T::zero()) {
        return Err(Error::ZeroSocialCost);
    }
    Ok(total_latency(network, user_flows, f)? / social)
}

/// `(t(x)'x, t(x)'x_AON)` at frozen latencies.
fn frozen_costs<T: Scalar>(
    network: &Network<T>,
    flows: &[T],
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
) -> Result<(T, T)> {
    network.check_len("flows", flows.len())?;
    if flows.iter().any(|&x| x < T::zero()) {
        return Err(Error::InvalidArgument("flows must be nonnegative".into()));
    }
    let model = UserCost(f);
    let costs = link_costs(network, &model, flows);
    let aon = assign_all_or_nothing(network, demand, &costs)?;
    Ok((dot(&costs, flows), dot(&costs, &aon)))
}

/// `(t(x)'x − t(x)'x_AON) / t(x)'x`; zero when there is no demand.
pub fn relative_gap<T: Scalar>(
    network: &Network<T>,
    flows: &[T],
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
) -> Result<T> {
    let (tx, ty) = frozen_costs(network, flows, demand, f)?;
    if !(tx > T::zero()) {
        return Ok(T::zero());
    }
    Ok(((tx - ty) / tx).max(T::zero()))
}

/// Smallest `ε` for which `flows` is an ε-approximate equilibrium:
/// `t(x)'x − min_{y∈F} t(x)'y`.
pub fn wardrop_epsilon<T: Scalar>(
    network: &Network<T>,
    flows: &[T],
    demand: &DemandVector<T>,
    f: &LatencyFunction<T>,
) -> Result<T> {
    let (tx, ty) = frozen_costs(network, flows, demand, f)?;
    Ok((tx - ty).max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, LinkSpec};
    use approx::assert_relative_eq;

    fn pigou() -> Network<f64> {
        build_network(
            &[
                LinkSpec::new(1, 2, 1.0, 1.0),
                LinkSpec::new(1, 2, 2.0, 1e9),
                LinkSpec::new(2, 1, 1.0, 1.0),
            ],
            &[(1, 2)],
            None,
        )
        .unwrap()
    }

    fn symmetric() -> Network<f64> {
        build_network(
            &[
                LinkSpec::new(1, 2, 1.0, 1.0),
                LinkSpec::new(1, 2, 1.0, 1.0),
                LinkSpec::new(2, 1, 1.0, 1.0),
            ],
            &[(1, 2)],
            None,
        )
        .unwrap()
    }

    fn tight(rule: StepRule) -> SolverSettings {
        SolverSettings::new(20000, 1e-9, rule)
    }

    fn demand(v: f64) -> DemandVector<f64> {
        DemandVector::new(vec![v]).unwrap()
    }

    #[test]
    fn pigou_user_equilibrium() {
        let f = LatencyFunction::linear(1.0);
        for rule in [StepRule::ExactLineSearch, StepRule::Conjugate] {
            let r = solve_ue(&pigou(), &demand(1.0), &f, &tight(rule)).unwrap();
            assert_relative_eq!(r.flows[0], 1.0, epsilon = 1e-6);
            assert!(r.flows[1] < 1e-6);
            assert_relative_eq!(total_latency(&pigou(), &r.flows, &f).unwrap(), 2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn msa_converges_on_pigou() {
        let f = LatencyFunction::linear(1.0);
        let r = solve_ue(&pigou(), &demand(1.0), &f, &SolverSettings::default()).unwrap();
        assert!(r.final_rel_gap <= 1e-4);
        assert!((r.flows[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn pigou_social_optimum() {
        let f = LatencyFunction::linear(1.0);
        let r = solve_so(&pigou(), &demand(1.0), &f, &tight(StepRule::ExactLineSearch)).unwrap();
        assert_relative_eq!(r.flows[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(r.flows[1], 0.5, epsilon = 1e-6);
        assert_relative_eq!(r.objective, 1.75, epsilon = 1e-6);
        assert_relative_eq!(total_latency(&pigou(), &r.flows, &f).unwrap(), 1.75, epsilon = 1e-6);
    }

    #[test]
    fn single_route_finishes_in_one_iteration() {
        let net = build_network(
            &[LinkSpec::new(1, 2, 1.0, 3.0), LinkSpec::new(2, 1, 1.0, 1.0)],
            &[(1, 2)],
            None,
        )
        .unwrap();
        let f = LatencyFunction::bpr();
        let r = solve_ue(&net, &demand(7.0), &f, &SolverSettings::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.flows.as_slice(), &[7.0, 0.0]);
        let s = solve_so(&net, &demand(7.0), &f, &SolverSettings::default()).unwrap();
        assert_eq!(s.flows.as_slice(), &[7.0, 0.0]);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let f = LatencyFunction::linear(1.0);
        let settings = tight(StepRule::ExactLineSearch);
        let u = solve_ue(&symmetric(), &demand(2.0), &f, &settings).unwrap();
        let s = solve_so(&symmetric(), &demand(2.0), &f, &settings).unwrap();
        assert_relative_eq!(u.flows[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(s.flows[1], 1.0, epsilon = 1e-9);
        let poa = price_of_anarchy(&symmetric(), &u.flows, &s.flows, &f).unwrap();
        assert_relative_eq!(poa, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pigou_price_of_anarchy() {
        let f = LatencyFunction::linear(1.0);
        let settings = tight(StepRule::ExactLineSearch);
        let u = solve_ue(&pigou(), &demand(1.0), &f, &settings).unwrap();
        let s = solve_so(&pigou(), &demand(1.0), &f, &settings).unwrap();
        let poa = price_of_anarchy(&pigou(), &u.flows, &s.flows, &f).unwrap();
        assert_relative_eq!(poa, 8.0 / 7.0, epsilon = 1e-6);
        assert_eq!(price_of_anarchy(&pigou(), &u.flows, &u.flows, &f).unwrap(), 1.0);
    }

    #[test]
    fn zero_social_cost_is_an_error() {
        let f = LatencyFunction::linear(1.0);
        let z = [0.0, 0.0, 0.0];
        assert!(matches!(price_of_anarchy(&pigou(), &z, &z, &f), Err(Error::ZeroSocialCost)));
    }

    #[test]
    fn total_latency_arithmetic() {
        // latencies (2, 3) at flows (1, 2): t⁰ chosen so that f = 1 + z with m = 1
        let net = build_network(
            &[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(2, 1, 1.0, 1.0)],
            &[(1, 2)],
            None,
        )
        .unwrap();
        let f = LatencyFunction::linear(1.0);
        assert_eq!(total_latency(&net, &[1.0, 2.0], &f).unwrap(), 1.0 * 2.0 + 2.0 * 3.0);
        assert_eq!(total_latency(&net, &[0.0, 0.0], &f).unwrap(), 0.0);
    }

    #[test]
    fn gap_and_epsilon() {
        let f = LatencyFunction::linear(1.0);
        let net = pigou();
        // exact equilibrium
        assert!(relative_gap(&net, &[1.0, 0.0, 0.0], &demand(1.0), &f).unwrap() < 1e-9);
        assert!(wardrop_epsilon(&net, &[1.0, 0.0, 0.0], &demand(1.0), &f).unwrap() < 1e-9);
        // everything on the slow link: ε = 1·2 − 1·1
        let flows = [0.0, 1.0, 0.0];
        assert_relative_eq!(wardrop_epsilon(&net, &flows, &demand(1.0), &f).unwrap(), 1.0, epsilon = 1e-8);
        assert!(relative_gap(&net, &flows, &demand(1.0), &f).unwrap() > 0.0);
        assert_eq!(relative_gap(&net, &[0.0; 3], &demand(0.0), &f).unwrap(), 0.0);
        // doubling every free-flow time doubles ε
        let doubled = net.with_link_parameters(&[2.0, 4.0, 2.0], &net.capacities()).unwrap();
        assert_relative_eq!(wardrop_epsilon(&doubled, &flows, &demand(1.0), &f).unwrap(), 2.0, epsilon = 1e-8);
    }

    #[test]
    fn not_converged_reports_best_iterate() {
        let f = LatencyFunction::linear(1.0);
        let net = build_network(
            &[
                LinkSpec::new(1, 2, 1.0, 1.0),
                LinkSpec::new(1, 2, 1.3, 1.0),
                LinkSpec::new(2, 1, 1.0, 1.0),
            ],
            &[(1, 2)],
            None,
        )
        .unwrap();
        let settings = SolverSettings::new(2, 1e-12, StepRule::Msa);
        let err = solve_ue(&net, &demand(2.0), &f, &settings).unwrap_err();
        match err {
            Error::NotConverged { iterations, rel_gap, flows } => {
                assert_eq!(iterations, 2);
                assert!(rel_gap > 0.0);
                assert_eq!(flows.len(), 3);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn nonconvex_total_cost_rejected() {
        let f = LatencyFunction::new(vec![1.0, -0.4]).unwrap();
        let r = solve_so(&symmetric(), &demand(2.0), &f, &SolverSettings::default());
        assert!(matches!(r, Err(Error::NonConvexObjective { .. })));
    }

    #[test]
    fn result_json_shape() {
        let r = EquilibriumResult {
            flows: FlowVector::new(vec![1.0, 0.5]).unwrap(),
            iterations: 3,
            final_rel_gap: 1e-5,
            objective: 2.0,
            objective_kind: ObjectiveKind::Beckmann,
            converged: true,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"flows":[1.0,0.5],"iterations":3,"rel_gap":0.00001,"objective":2.0}"#
        );
    }

    #[test]
    fn invalid_settings_rejected() {
        let f = LatencyFunction::linear(1.0);
        assert!(solve_ue(&pigou(), &demand(1.0), &f, &SolverSettings::new(0, 1e-4, StepRule::Msa)).is_err());
        assert!(solve_ue(&pigou(), &demand(1.0), &f, &SolverSettings::new(5, 0.0, StepRule::Msa)).is_err());
        assert!(solve_ue(&pigou(), &DemandVector::zeros(2), &f, &SolverSettings::default()).is_err());
    }

    #[test]
    fn route_flows_rebuild_link_flows() {
        let f = LatencyFunction::linear(1.0);
        for rule in [StepRule::Msa, StepRule::ExactLineSearch, StepRule::Conjugate, StepRule::GradientProjection] {
            let (r, routes) = solve_ue_with_routes(&symmetric(), &demand(2.0), &f, &tight(rule)).unwrap();
            let x = routes.link_flows(3);
            for (a, b) in x.iter().zip(r.flows.iter()) {
                assert!((a - b).abs() < 1e-9, "{rule:?}: {x:?} vs {:?}", r.flows);
            }
            assert_eq!(routes.per_od[0].len(), 2);
            let costs = link_costs(&symmetric(), &UserCost(&f), r.flows.as_slice());
            assert!(routes.cost_spread(&costs, 1e-6)[0] < 1e-6);
        }
    }

    #[test]
    fn gradient_projection_matches_closed_forms() {
        let f = LatencyFunction::linear(1.0);
        let s = tight(StepRule::GradientProjection);
        let ue = solve_ue(&pigou(), &demand(1.0), &f, &s).unwrap();
        assert_relative_eq!(ue.flows[0], 1.0, epsilon = 1e-9);
        let so = solve_so(&pigou(), &demand(1.0), &f, &s).unwrap();
        assert_relative_eq!(so.flows[0], 0.5, epsilon = 1e-6);
        assert!(so.iterations < 100, "{}", so.iterations);
    }
}
