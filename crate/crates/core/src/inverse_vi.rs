//! Inverse variational inequality estimation of the shared latency function.
//!
//! Given observed flows that are (near) Wardrop equilibria, find polynomial
//! coefficients `β` such that every observation is an ε-approximate
//! equilibrium under `f(z) = Σ βᵢ zⁱ`, trading off `‖ε‖²` against a
//! kernel-weighted ridge on `β`. Strong duality of the shortest-path LP
//! gives linear constraints: for each observation `k` and OD `w` the node
//! potentials `y` must satisfy `y_head − y_tail ≤ tₐ⁰ f(zₐ)` on every link,
//! and the primal cost may exceed the dual bound `Σ_w dʷ (y_dest − y_orig)`
//! by at most `ε_k`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{total_latency, wardrop_epsilon};
use crate::error::{Error, Result};
use crate::latency::LatencyFunction;
use crate::net::{DemandVector, FlowVector, Network};
use crate::qp::{solve_qp, QpSettings, QuadraticProgram};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Observation<T> {
    pub network: Arc<Network<T>>,
    pub flows: FlowVector<T>,
    pub demand: DemandVector<T>,
}

/// `K ≥ 1` observed flow patterns, each with its network and demand.
#[derive(Clone, Debug)]
pub struct ObservationSet<T> {
    observations: Vec<Observation<T>>,
}

impl<T: Scalar> ObservationSet<T> {
    pub fn new(observations: Vec<Observation<T>>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyObservations);
        }
        for o in &observations {
            o.network.check_len("observed flows", o.flows.len())?;
            o.network.check_od_len("observed demand", o.demand.len())?;
        }
        Ok(Self { observations })
    }

    /// Observations on one network, one demand vector per flow vector.
    pub fn on_network(
        network: Arc<Network<T>>,
        samples: Vec<(FlowVector<T>, DemandVector<T>)>,
    ) -> Result<Self> {
        Self::new(
            samples
                .into_iter()
                .map(|(flows, demand)| Observation {
                    network: Arc::clone(&network),
                    flows,
                    demand,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn get(&self, k: usize) -> &Observation<T> {
        &self.observations[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation<T>> {
        self.observations.iter()
    }

    /// Observations at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&k| self.observations[k].clone()).collect())
    }

    /// Sorted observed congestion ratios with near-duplicates merged.
    pub fn distinct_ratios(&self) -> Vec<T> {
        let mut z: Vec<T> = self
            .observations
            .iter()
            .flat_map(|o| {
                o.network
                    .links()
                    .iter()
                    .zip(o.flows.iter())
                    .map(|(l, &x)| x / l.capacity)
            })
            .collect();
        z.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
        let tol = T::lit(1e-12);
        let mut out: Vec<T> = Vec::with_capacity(z.len());
        for v in z {
            match out.last() {
                Some(&last) if (v - last).abs() <= tol * T::one().max(last.abs()) => {}
                _ => out.push(v),
            }
        }
        out
    }
}

/// Kernel hyperparameters: polynomial degree, kernel offset and ridge weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub n: usize,
    pub c: f64,
    pub gamma: f64,
}

impl KernelParams {
    pub fn new(n: usize, c: f64, gamma: f64) -> Self {
        Self { n, c, gamma }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 1 || self.n > crate::latency::MAX_DEGREE {
            return Err(Error::InvalidArgument(format!(
                "degree must be in 1..={}, got {}",
                crate::latency::MAX_DEGREE,
                self.n
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel offset must be positive, got {}", self.c)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weight `1 / (C(n,i) c^{n−i})` of `βᵢ²` in the ridge term.
fn kernel_weight(n: usize, c: f64, i: usize) -> f64 {
    1.0 / (binomial(n, i) * c.powi((n - i) as i32))
}

/// `Σᵢ βᵢ² / (C(n,i) c^{n−i})`.
pub fn kernel_penalty<T: Scalar>(beta: &[T], c: f64) -> T {
    let n = beta.len() - 1;
    beta.iter()
        .enumerate()
        .map(|(i, &b)| b * b * T::lit(kernel_weight(n, c, i)))
        .sum()
}

/// Where each block of variables and rows sits in the assembled program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvViLayout {
    pub degree: usize,
    /// `(observation, od, first variable)` of each potential block.
    pub dual_blocks: Vec<(usize, usize, usize)>,
    pub nodes_per_block: Vec<usize>,
    pub eps_offset: usize,
    pub variables: usize,
    pub dual_rows: usize,
    pub gap_rows: usize,
    pub monotone_rows: usize,
}

/// Builds the inverse-VI quadratic program, with one monotonicity row per
/// ordered pair of distinct observed ratios.
pub fn assemble_invvi<T: Scalar>(
    obs: &ObservationSet<T>,
    params: &KernelParams,
) -> Result<(QuadraticProgram<T>, InvViLayout)> {
    assemble(obs, params, true)
}

/// Pairwise rows are implied by the rows between sorted neighbours; the
/// solver gets only those, since the quadratic number of redundant rows
/// stalls ADMM on a few hundred ratios.
fn assemble<T: Scalar>(
    obs: &ObservationSet<T>,
    params: &KernelParams,
    pairwise: bool,
) -> Result<(QuadraticProgram<T>, InvViLayout)> {
    params.validate()?;
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let n = params.n;

    let mut dual_blocks = Vec::new();
    let mut nodes_per_block = Vec::new();
    let mut next = n + 1;
    for (k, o) in obs.iter().enumerate() {
        for (w, &d) in o.demand.iter().enumerate() {
            if d > T::zero() {
                dual_blocks.push((k, w, next));
                nodes_per_block.push(o.network.node_count());
                next += o.network.node_count();
            }
        }
    }
    let eps_offset = next;
    let variables = eps_offset + obs.len();

    let mut qp = QuadraticProgram::new(variables);
    for i in 0..=n {
        qp.quadratic[(i, i)] = T::lit(2.0 * params.gamma * kernel_weight(n, params.c, i));
    }
    for k in 0..obs.len() {
        qp.quadratic[(eps_offset + k, eps_offset + k)] = T::lit(2.0);
        qp.set_bounds(eps_offset + k, T::zero(), T::infinity());
    }
    qp.set_bounds(0, T::one(), T::one());

    // powers zᵢ of each link ratio, scaled by t⁰
    let scaled_powers = |o: &Observation<T>, a: usize| -> Vec<T> {
        let l = o.network.link(a);
        let z = o.flows[a] / l.capacity;
        let mut p = Vec::with_capacity(n + 1);
        let mut zi = T::one();
        for _ in 0..=n {
            p.push(l.free_flow_time * zi);
            zi *= z;
        }
        p
    };

    let mut dual_rows = 0;
    for (b, &(k, w, off)) in dual_blocks.iter().enumerate() {
        let o = obs.get(k);
        let od = o.network.od_pair(w);
        // potentials are defined up to a constant
        qp.set_bounds(off + od.origin, T::zero(), T::zero());
        debug_assert_eq!(nodes_per_block[b], o.network.node_count());
        for (a, link) in o.network.links().iter().enumerate() {
            let mut row: Vec<(usize, T)> = vec![(off + link.head, T::one()), (off + link.tail, -T::one())];
            for (i, p) in scaled_powers(o, a).into_iter().enumerate() {
                row.push((i, -p));
            }
            qp.add_inequality(row, T::zero());
            dual_rows += 1;
        }
    }

    let mut gap_rows = 0;
    for (k, o) in obs.iter().enumerate() {
        let mut beta_coef = vec![T::zero(); n + 1];
        for a in 0..o.network.link_count() {
            let x = o.flows[a];
            for (i, p) in scaled_powers(o, a).into_iter().enumerate() {
                beta_coef[i] += x * p;
            }
        }
        let mut row: Vec<(usize, T)> = beta_coef.into_iter().enumerate().collect();
        for &(bk, w, off) in &dual_blocks {
            if bk != k {
                continue;
            }
            let od = o.network.od_pair(w);
            let d = o.demand[w];
            row.push((off + od.destination, -d));
            row.push((off + od.origin, d));
        }
        row.push((eps_offset + k, -T::one()));
        qp.add_inequality(row, T::zero());
        gap_rows += 1;
    }

    let ratios = obs.distinct_ratios();
    let mut monotone_rows = 0;
    for (j, &zj) in ratios.iter().enumerate() {
        let first = if pairwise { 0 } else { j.saturating_sub(1) };
        for &zi in &ratios[first..j] {
            // f(zᵢ) ≤ f(zⱼ) for zᵢ < zⱼ
            let mut row = Vec::with_capacity(n);
            let (mut pi, mut pj) = (zi, zj);
            for deg in 1..=n {
                row.push((deg, pi - pj));
                pi *= zi;
                pj *= zj;
            }
            qp.add_inequality(row, T::zero());
            monotone_rows += 1;
        }
    }

    Ok((
        qp,
        InvViLayout {
            degree: n,
            dual_blocks,
            nodes_per_block,
            eps_offset,
            variables,
            dual_rows,
            gap_rows,
            monotone_rows,
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseViSolution<T> {
    pub beta: Vec<T>,
    /// Node potentials per observation and OD; empty for zero-demand ODs.
    pub duals: Vec<Vec<Vec<T>>>,
    pub epsilons: Vec<T>,
    pub params: KernelParams,
    /// `‖ε‖² + γ·Σ βᵢ²/(C(n,i)c^{n−i})`.
    pub objective: T,
    pub cv_scores: Vec<f64>,
}

impl<T: Scalar> Serialize for InverseViSolution<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("InverseViSolution", 6)?;
        st.serialize_field("beta", &self.beta)?;
        st.serialize_field("n", &self.params.n)?;
        st.serialize_field("c", &self.params.c)?;
        st.serialize_field("gamma", &self.params.gamma)?;
        st.serialize_field("epsilons", &self.epsilons)?;
        st.serialize_field("cv_scores", &self.cv_scores)?;
        st.end()
    }
}

impl<T: Scalar> InverseViSolution<T> {
    pub fn latency(&self) -> Result<LatencyFunction<T>> {
        LatencyFunction::with_offset(self.beta.clone(), T::lit(self.params.c))
    }

    /// Left side of the gap row of observation `k`, recomputed from `β` and
    /// the potentials: `Σₐ tₐ⁰xₐ f(zₐ) − Σ_w dʷ (y_dest − y_orig)`.
    pub fn gap(&self, obs: &ObservationSet<T>, k: usize) -> T {
        let o = obs.get(k);
        let f = |z: T| self.beta.iter().rev().fold(T::zero(), |acc, &b| acc * z + b);
        let primal: T = o
            .network
            .links()
            .iter()
            .zip(o.flows.iter())
            .map(|(l, &x)| l.free_flow_time * x * f(x / l.capacity))
            .sum();
        let dual: T = o
            .demand
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > T::zero())
            .map(|(w, &d)| {
                let od = o.network.od_pair(w);
                let y = &self.duals[k][w];
                d * (y[od.destination] - y[od.origin])
            })
            .sum();
        primal - dual
    }
}

/// Solves the inverse problem at fixed hyperparameters.
pub fn estimate_cost<T: Scalar>(
    obs: &ObservationSet<T>,
    params: &KernelParams,
) -> Result<(InverseViSolution<T>, LatencyFunction<T>)> {
    estimate_cost_with(obs, params, &QpSettings::default())
}

pub fn estimate_cost_with<T: Scalar>(
    obs: &ObservationSet<T>,
    params: &KernelParams,
    settings: &QpSettings,
) -> Result<(InverseViSolution<T>, LatencyFunction<T>)> {
    let (qp, layout) = assemble(obs, params, false)?;
    let sol = solve_qp(&qp, settings)?;
    let x = sol.x;
    let mut beta = x[..=params.n].to_vec();
    beta[0] = T::one();
    let epsilons: Vec<T> = x[layout.eps_offset..].iter().map(|&e| e.max(T::zero())).collect();
    let mut duals: Vec<Vec<Vec<T>>> = obs.iter().map(|o| vec![Vec::new(); o.demand.len()]).collect();
    for (&(k, w, off), &nodes) in layout.dual_blocks.iter().zip(&layout.nodes_per_block) {
        duals[k][w] = x[off..off + nodes].to_vec();
    }
    let objective = epsilons.iter().map(|&e| e * e).sum::<T>() + T::lit(params.gamma) * kernel_penalty(&beta, params.c);
    let solution = InverseViSolution {
        beta,
        duals,
        epsilons,
        params: *params,
        objective,
        cv_scores: Vec::new(),
    };
    let f = solution.latency()?;
    Ok((solution, f))
}

/// Hyperparameter grid searched by cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub n: Vec<usize>,
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            n: vec![3, 4, 5, 6],
            c: vec![0.5, 1.0, 1.5],
            gamma: vec![0.01, 0.1, 1.0, 10.0, 100.0],
        }
    }
}

impl HyperGrid {
    pub fn points(&self) -> Vec<KernelParams> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &c in &self.c {
                for &gamma in &self.gamma {
                    out.push(KernelParams::new(n, c, gamma));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvEntry {
    pub params: KernelParams,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossValidation {
    pub best: KernelParams,
    pub best_scores: Vec<f64>,
    pub table: Vec<CvEntry>,
}

/// Contiguous folds by observation index; the first `K mod folds` folds
/// get one extra observation.
pub fn fold_indices(k: usize, folds: usize) -> Vec<Vec<usize>> {
    let base = k / folds;
    let extra = k % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for j in 0..folds {
        let size = base + usize::from(j < extra);
        out.push((start..start + size).collect());
        start += size;
    }
    out
}

/// Held-out score: mean of `ε(x)/L(x)` under `f` over the observations.
pub fn holdout_score<T: Scalar>(obs: &ObservationSet<T>, f: &LatencyFunction<T>) -> Result<f64> {
    let mut total = 0.0;
    for o in obs.iter() {
        let eps = wardrop_epsilon(&o.network, &o.flows, &o.demand, f)?;
        let l = total_latency(&o.network, &o.flows, f)?;
        total += if l > T::zero() { (eps / l).as_f64() } else { 0.0 };
    }
    Ok(total / obs.len() as f64)
}

fn better(a: &CvEntry, b: &CvEntry) -> bool {
    let tie = (a.mean - b.mean).abs() <= 1e-12 * a.mean.abs().max(b.mean.abs()).max(f64::MIN_POSITIVE);
    if !tie {
        return a.mean < b.mean;
    }
    (a.params.n, -a.params.gamma, a.params.c) < (b.params.n, -b.params.gamma, b.params.c)
}

/// k-fold cross-validation over the grid. A grid point whose training
/// problem fails to solve scores `+∞`.
pub fn cross_validate<T: Scalar>(
    obs: &ObservationSet<T>,
    grid: &HyperGrid,
    folds: usize,
) -> Result<CrossValidation> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if obs.len() < folds {
        return Err(Error::InsufficientObservations {
            needed: folds,
            found: obs.len(),
        });
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    for p in &points {
        p.validate()?;
    }
    let parts = fold_indices(obs.len(), folds);
    let splits: Vec<(ObservationSet<T>, ObservationSet<T>)> = parts
        .iter()
        .enumerate()
        .map(|(j, test)| {
            let train: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            Ok((obs.subset(&train)?, obs.subset(test)?))
        })
        .collect::<Result<_>>()?;

    let table: Vec<CvEntry> = points
        .par_iter()
        .map(|p| {
            let fold_scores: Vec<f64> = splits
                .iter()
                .map(|(train, test)| match estimate_cost(train, p) {
                    Ok((_, f)) => holdout_score(test, &f).unwrap_or(f64::INFINITY),
                    Err(e) => {
                        log::warn!("training failed at n={} c={} gamma={}: {e}", p.n, p.c, p.gamma);
                        f64::INFINITY
                    }
                })
                .collect();
            let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            CvEntry {
                params: *p,
                fold_scores,
                mean,
            }
        })
        .collect();

    let best = table
        .iter()
        .fold(None::<&CvEntry>, |acc, e| match acc {
            Some(b) if !better(e, b) => Some(b),
            _ => Some(e),
        })
        .expect("non-empty grid");
    if !best.mean.is_finite() {
        return Err(Error::InvalidArgument("no grid point could be trained".into()));
    }
    Ok(CrossValidation {
        best: best.params,
        best_scores: best.fold_scores.clone(),
        table,
    })
}

/// Cross-validates, then refits on all observations at the selected point.
pub fn estimate_with_cv<T: Scalar>(
    obs: &ObservationSet<T>,
    grid: &HyperGrid,
    folds: usize,
) -> Result<(InverseViSolution<T>, LatencyFunction<T>, CrossValidation)> {
    let cv = cross_validate(obs, grid, folds)?;
    let (mut sol, f) = estimate_cost(obs, &cv.best)?;
    sol.cv_scores = cv.best_scores.clone();
    Ok((sol, f, cv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, LinkSpec};
    use approx::assert_relative_eq;

    fn two_link() -> Arc<Network<f64>> {
        Arc::new(build_network(&[LinkSpec::new(1, 2, 1.0, 1.0), LinkSpec::new(2, 1, 1.0, 1.0)], &[(1, 2)], None).unwrap())
    }

    fn sample(net: &Arc<Network<f64>>, x: Vec<f64>, d: f64) -> (FlowVector<f64>, DemandVector<f64>) {
        let _ = net;
        (FlowVector::new(x).unwrap(), DemandVector::new(vec![d]).unwrap())
    }

    #[test]
    fn kernel_penalty_example() {
        assert_relative_eq!(kernel_penalty(&[1.0, 0.15], 1.0), 1.0225, epsilon = 1e-15);
        // n = 2, c = 2: weights 1/4, 1/4, 1
        assert_relative_eq!(kernel_penalty(&[1.0, 2.0, 3.0], 2.0), 0.25 + 1.0 + 9.0, epsilon = 1e-12);
    }

    #[test]
    fn row_counts() {
        let net = two_link();
        let obs = ObservationSet::on_network(net.clone(), vec![sample(&net, vec![0.5, 0.0], 0.5)]).unwrap();
        let (qp, layout) = assemble_invvi(&obs, &KernelParams::new(1, 1.0, 1.0)).unwrap();
        // β₀, β₁, two potentials, one ε
        assert_eq!(layout.variables, 5);
        assert_eq!(qp.dim(), 5);
        assert_eq!(layout.dual_rows, 2);
        assert_eq!(layout.gap_rows, 1);
        assert_eq!(layout.monotone_rows, 1);
    }

    #[test]
    fn monotone_rows_for_three_ratios() {
        let net = Arc::new(
            build_network(
                &[
                    LinkSpec::new(1, 2, 1.0, 1.0),
                    LinkSpec::new(2, 3, 1.0, 1.0),
                    LinkSpec::new(3, 1, 1.0, 1.0),
                ],
                &[(1, 3)],
                None,
            )
            .unwrap(),
        );
        let obs = ObservationSet::on_network(
            net.clone(),
            vec![(FlowVector::new(vec![0.2, 0.5, 0.9]).unwrap(), DemandVector::new(vec![0.2]).unwrap())],
        )
        .unwrap();
        let (_, layout) = assemble_invvi(&obs, &KernelParams::new(2, 1.0, 1.0)).unwrap();
        assert_eq!(layout.monotone_rows, 3);
        // duplicates merge
        let obs = ObservationSet::on_network(
            net.clone(),
            vec![(FlowVector::new(vec![0.5, 0.5, 0.5]).unwrap(), DemandVector::new(vec![0.5]).unwrap())],
        )
        .unwrap();
        let (_, layout) = assemble_invvi(&obs, &KernelParams::new(2, 1.0, 1.0)).unwrap();
        assert_eq!(layout.monotone_rows, 0);
    }

    #[test]
    fn zero_demand_ods_are_dropped() {
        let net = two_link();
        let obs = ObservationSet::on_network(net.clone(), vec![sample(&net, vec![0.0, 0.0], 0.0)]).unwrap();
        let (_, layout) = assemble_invvi(&obs, &KernelParams::new(1, 1.0, 1.0)).unwrap();
        assert_eq!(layout.dual_rows, 0);
        assert!(layout.dual_blocks.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(ObservationSet::<f64>::new(vec![]), Err(Error::EmptyObservations)));
        let net = two_link();
        let obs = ObservationSet::on_network(net.clone(), vec![sample(&net, vec![0.5, 0.0], 0.5)]).unwrap();
        assert!(assemble_invvi(&obs, &KernelParams::new(0, 1.0, 1.0)).is_err());
        assert!(assemble_invvi(&obs, &KernelParams::new(2, 0.0, 1.0)).is_err());
        assert!(assemble_invvi(&obs, &KernelParams::new(2, 1.0, 0.0)).is_err());
        let bad = ObservationSet::on_network(net.clone(), vec![sample(&net, vec![0.5], 0.5)]);
        assert!(bad.is_err());
    }

    fn parallel_obs() -> ObservationSet<f64> {
        // two parallel links with t⁰ = 1 and 2 under f = 1 + z: any split with
        // 1 + x₁ = 2(1 + x₂) is an equilibrium
        let net = Arc::new(
            build_network(
                &[
                    LinkSpec::new(1, 2, 1.0, 1.0),
                    LinkSpec::new(1, 2, 2.0, 1.0),
                    LinkSpec::new(2, 1, 1.0, 1.0),
                ],
                &[(1, 2)],
                None,
            )
            .unwrap(),
        );
        let samples = [2.0, 3.0, 4.0, 5.0]
            .iter()
            .map(|&d: &f64| {
                let x2 = (d - 1.0) / 3.0;
                let x1 = d - x2;
                (FlowVector::new(vec![x1, x2, 0.0]).unwrap(), DemandVector::new(vec![d]).unwrap())
            })
            .collect();
        ObservationSet::on_network(net, samples).unwrap()
    }

    #[test]
    fn recovers_linear_latency() {
        let obs = parallel_obs();
        let (sol, f) = estimate_cost(&obs, &KernelParams::new(1, 1.0, 1e-6)).unwrap();
        assert_eq!(f.value(0.0), 1.0);
        assert_relative_eq!(sol.beta[1], 1.0, epsilon = 1e-3);
        for k in 0..obs.len() {
            assert!(sol.epsilons[k] < 1e-3);
            let gap = sol.gap(&obs, k);
            assert!(sol.epsilons[k] >= gap - 1e-6 * gap.abs().max(1.0), "{k}: {} < {gap}", sol.epsilons[k]);
        }
    }

    #[test]
    fn larger_gamma_shrinks_coefficients() {
        let obs = parallel_obs();
        let norm = |g: f64| {
            let (s, _) = estimate_cost(&obs, &KernelParams::new(2, 1.0, g)).unwrap();
            s.beta[1..].iter().map(|b| b * b).sum::<f64>().sqrt()
        };
        assert!(norm(100.0) < norm(0.01));
    }

    #[test]
    fn fold_partition() {
        assert_eq!(fold_indices(3, 3), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(fold_indices(7, 3), vec![vec![0, 1, 2], vec![3, 4], vec![5, 6]]);
    }

    #[test]
    fn single_grid_point_is_returned() {
        let obs = parallel_obs();
        let grid = HyperGrid {
            n: vec![2],
            c: vec![1.0],
            gamma: vec![0.1],
        };
        let cv = cross_validate(&obs, &grid, 2).unwrap();
        assert_eq!(cv.best, KernelParams::new(2, 1.0, 0.1));
        assert_eq!(cv.best_scores.len(), 2);
        assert!(cv.best_scores.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn cv_needs_enough_observations() {
        let obs = parallel_obs();
        let r = cross_validate(&obs, &HyperGrid::default(), 5);
        assert!(matches!(r, Err(Error::InsufficientObservations { needed: 5, found: 4 })));
        assert!(cross_validate(&obs, &HyperGrid::default(), 1).is_err());
    }

    #[test]
    fn tie_break_prefers_small_degree_then_large_gamma() {
        let e = |n, gamma| CvEntry {
            params: KernelParams::new(n, 1.0, gamma),
            fold_scores: vec![],
            mean: 0.5,
        };
        assert!(better(&e(3, 1.0), &e(4, 1.0)));
        assert!(better(&e(3, 10.0), &e(3, 1.0)));
    }

    #[test]
    fn solution_json_shape() {
        let s = InverseViSolution {
            beta: vec![1.0, 0.5],
            duals: vec![],
            epsilons: vec![0.0],
            params: KernelParams::new(1, 1.5, 0.01),
            objective: 0.0,
            cv_scores: vec![0.25],
        };
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"beta":[1.0,0.5],"n":1,"c":1.5,"gamma":0.01,"epsilons":[0.0],"cv_scores":[0.25]}"#
        );
    }
}
