//! Bilevel OD demand calibration.
//!
//! Minimizes `F(g) = γ₁‖g − g⁰‖² + γ₂‖x(g) − x̃‖²`, where `x(g)` is the user
//! equilibrium under demand `g`, by projected gradient descent. The
//! Jacobian `∂x/∂g` is approximated by fastest-route indicators at the
//! current latencies. Each outer step evaluates `F` on the geometric
//! ladder `θ_max/ρʲ, j = 0..T` plus `θ = 0` and keeps the best, so `F`
//! never increases.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{link_costs, run_assignment, ObjectiveKind, SolverSettings, StepRule, UserCost};
use crate::error::{Error, Result};
use crate::latency::LatencyFunction;
use crate::linalg::DenseMatrix;
use crate::net::{fastest_routes, DemandVector, FlowVector, Network};
use crate::scalar::{norm2, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdjustSettings {
    pub gamma1: f64,
    pub gamma2: f64,
    pub rho: u32,
    /// Number of step halvings (by `ρ`) tried below `θ_max`.
    pub t: u32,
    pub eps1: f64,
    pub eps2: f64,
    pub max_outer_iterations: usize,
    pub inner: SolverSettings,
}

impl Default for AdjustSettings {
    fn default() -> Self {
        Self {
            gamma1: 0.0,
            gamma2: 1.0,
            rho: 2,
            t: 10,
            eps1: 0.0,
            eps2: 1e-20,
            max_outer_iterations: 10,
            inner: SolverSettings::new(5000, 1e-5, StepRule::Conjugate),
        }
    }
}

impl AdjustSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return bad(format!("weights must be nonnegative, got γ₁={} γ₂={}", self.gamma1, self.gamma2));
        }
        if self.rho < 2 {
            return bad(format!("ρ must be at least 2, got {}", self.rho));
        }
        if self.t < 1 {
            return bad("T must be at least 1".into());
        }
        if !(self.eps1 >= 0.0) || !(self.eps2 > 0.0) {
            return bad(format!("need ε₁ ≥ 0 and ε₂ > 0, got {} and {}", self.eps1, self.eps2));
        }
        self.inner.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    #[serde(rename = "F")]
    pub objective: f64,
    pub theta: f64,
    /// `‖gˡ − g⁰‖₂`.
    pub demand_shift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjustTrace<T> {
    pub rows: Vec<TraceRow>,
    /// `g⁰, g¹, …` in order.
    pub demands: Vec<DemandVector<T>>,
}

impl<T: Scalar> AdjustTrace<T> {
    /// `‖gˡ − g*‖₂` for each iterate, for reporting against a known truth.
    pub fn distances_to(&self, truth: &[T]) -> Vec<f64> {
        self.demands
            .iter()
            .map(|g| {
                let d: Vec<T> = g.iter().zip(truth).map(|(&a, &b)| a - b).collect();
                norm2(&d).as_f64()
            })
            .collect()
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum()
}

/// `γ₁ Σᵢ (gᵢ − g⁰ᵢ)² + γ₂ Σₐ (xₐ(g) − x̃ₐ)²`.
pub fn bilevel_objective<T: Scalar>(g: &[T], g0: &[T], x: &[T], x_obs: &[T], gamma1: f64, gamma2: f64) -> Result<T> {
    if g.len() != g0.len() {
        return Err(Error::DimensionMismatch {
            what: "demand",
            expected: g0.len(),
            found: g.len(),
        });
    }
    if x.len() != x_obs.len() {
        return Err(Error::DimensionMismatch {
            what: "flows",
            expected: x_obs.len(),
            found: x.len(),
        });
    }
    let mut total = T::zero();
    if gamma1 != 0.0 {
        total += T::lit(gamma1) * sq_dist(g, g0);
    }
    if gamma2 != 0.0 {
        total += T::lit(gamma2) * sq_dist(x, x_obs);
    }
    Ok(total)
}

/// Sparse 0/1 approximation of `∂xₐ/∂gᵢ`: column `i` lists the links of
/// OD `i`'s fastest route.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteJacobian {
    pub link_count: usize,
    pub columns: Vec<Vec<usize>>,
}

impl RouteJacobian {
    pub fn to_dense<T: Scalar>(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.link_count, self.columns.len());
        for (i, col) in self.columns.iter().enumerate() {
            for &a in col {
                m[(a, i)] = T::one();
            }
        }
        m
    }
}

/// Fastest-route indicators at the latencies `t(x(g))`. Every OD gets a
/// column, whatever its demand.
pub fn route_jacobian<T: Scalar>(network: &Network<T>, f: &LatencyFunction<T>, flows: &[T]) -> Result<RouteJacobian> {
    network.check_len("flows", flows.len())?;
    let costs = link_costs(network, &UserCost(f), flows);
    let routes = fastest_routes(network, &costs)?;
    Ok(RouteJacobian {
        link_count: network.link_count(),
        columns: routes.into_iter().map(|r| r.links).collect(),
    })
}

/// `∂F/∂gᵢ = 2γ₁(gᵢ − g⁰ᵢ) + 2γ₂ Σₐ (xₐ(g) − x̃ₐ) ∂xₐ/∂gᵢ`.
pub fn gradient_f<T: Scalar>(
    g: &[T],
    g0: &[T],
    x: &[T],
    x_obs: &[T],
    jacobian: &RouteJacobian,
    gamma1: f64,
    gamma2: f64,
) -> Vec<T> {
    let two = T::lit(2.0);
    g.iter()
        .zip(g0)
        .zip(&jacobian.columns)
        .map(|((&gi, &g0i), col)| {
            let flow_term: T = col.iter().map(|&a| x[a] - x_obs[a]).sum();
            two * T::lit(gamma1) * (gi - g0i) + two * T::lit(gamma2) * flow_term
        })
        .collect()
}

fn equilibrium_flows<T: Scalar>(
    network: &Network<T>,
    f: &LatencyFunction<T>,
    g: &DemandVector<T>,
    settings: &SolverSettings,
) -> Result<FlowVector<T>> {
    let r = run_assignment(network, g, &UserCost(f), ObjectiveKind::Beckmann, settings)?;
    if !r.converged {
        log::warn!(
            "inner assignment stopped at gap {:e} after {} iterations",
            r.final_rel_gap.as_f64(),
            r.iterations
        );
    }
    Ok(r.flows)
}

/// Masked descent direction: `h̄ᵢ = hᵢ` when `gᵢ > ε₁` or `hᵢ > 0`, else 0.
fn masked_direction<T: Scalar>(g: &[T], h: &[T], eps1: f64) -> Vec<T> {
    g.iter()
        .zip(h)
        .map(|(&gi, &hi)| if gi > T::lit(eps1) || hi > T::zero() { hi } else { T::zero() })
        .collect()
}

/// Largest step keeping `g + θh̄ ≥ 0`; one when no component decreases.
fn max_step<T: Scalar>(g: &[T], hbar: &[T]) -> T {
    g.iter()
        .zip(hbar)
        .filter(|(_, &h)| h < T::zero())
        .map(|(&gi, &h)| -gi / h)
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.min(v))))
        .unwrap_or_else(T::one)
}

/// Runs the adjustment from `g⁰` against the observed flows `x̃`.
pub fn adjust_demand<T: Scalar>(
    network: &Network<T>,
    f: &LatencyFunction<T>,
    x_obs: &[T],
    g0: &DemandVector<T>,
    settings: &AdjustSettings,
) -> Result<(DemandVector<T>, AdjustTrace<T>)> {
    settings.validate()?;
    network.check_len("observed flows", x_obs.len())?;
    network.check_od_len("initial demand", g0.len())?;
    if x_obs.iter().any(|&v| !(v >= T::zero())) {
        return Err(Error::InvalidArgument("observed flows must be nonnegative".into()));
    }

    let mut g = g0.clone();
    let mut x = equilibrium_flows(network, f, &g, &settings.inner)?;
    let f0 = bilevel_objective(&g, g0, &x, x_obs, settings.gamma1, settings.gamma2)?;
    let mut trace = AdjustTrace {
        rows: vec![TraceRow {
            iteration: 0,
            objective: f0.as_f64(),
            theta: 0.0,
            demand_shift: 0.0,
        }],
        demands: vec![g.clone()],
    };
    if f0 == T::zero() {
        return Ok((g, trace));
    }

    let mut f_cur = f0;
    let rho = T::from_usize_lossy(settings.rho as usize);
    for l in 1..=settings.max_outer_iterations {
        let jac = route_jacobian(network, f, &x)?;
        let grad = gradient_f(&g, g0, &x, x_obs, &jac, settings.gamma1, settings.gamma2);
        let h: Vec<T> = grad.iter().map(|&v| -v).collect();
        let hbar = masked_direction(&g, &h, settings.eps1);
        let theta_max = max_step(&g, &hbar);

        let mut thetas = Vec::with_capacity(settings.t as usize + 2);
        let mut th = theta_max;
        for _ in 0..=settings.t {
            thetas.push(th);
            th /= rho;
        }
        let moves = hbar.iter().any(|&v| v != T::zero());
        let candidates: Vec<Result<(T, DemandVector<T>, FlowVector<T>)>> = if moves {
            thetas
                .par_iter()
                .map(|&theta| {
                    let gn: Vec<T> = g.iter().zip(&hbar).map(|(&gi, &hi)| (gi + theta * hi).max(T::zero())).collect();
                    let gn = DemandVector::new(gn)?;
                    let xn = equilibrium_flows(network, f, &gn, &settings.inner)?;
                    let fv = bilevel_objective(&gn, g0, &xn, x_obs, settings.gamma1, settings.gamma2)?;
                    Ok((fv, gn, xn))
                })
                .collect()
        } else {
            Vec::new()
        };

        // θ = 0 keeps the current point; earlier candidates win ties
        let mut best: Option<(T, T, DemandVector<T>, FlowVector<T>)> = None;
        for (theta, c) in thetas.iter().zip(candidates) {
            let (fv, gn, xn) = c?;
            if best.as_ref().is_none_or(|b| fv < b.0) {
                best = Some((fv, *theta, gn, xn));
            }
        }
        let (f_new, theta) = match best {
            Some((fv, theta, gn, xn)) if fv <= f_cur => {
                g = gn;
                x = xn;
                (fv, theta)
            }
            _ => (f_cur, T::zero()),
        };
        let shift: Vec<T> = g.iter().zip(g0.iter()).map(|(&a, &b)| a - b).collect();
        trace.rows.push(TraceRow {
            iteration: l,
            objective: f_new.as_f64(),
            theta: theta.as_f64(),
            demand_shift: norm2(&shift).as_f64(),
        });
        trace.demands.push(g.clone());
        let decrease = (f_cur - f_new) / f0;
        f_cur = f_new;
        if decrease < T::lit(settings.eps2) {
            break;
        }
    }
    Ok((g, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_ue;
    use crate::net::{build_network, LinkSpec};
    use approx::assert_relative_eq;

    fn triangle() -> Network<f64> {
        // 1→2, 2→3, 1→3, 3→1
        build_network(
            &[
                LinkSpec::new(1, 2, 1.0, 1.0),
                LinkSpec::new(2, 3, 1.0, 1.0),
                LinkSpec::new(1, 3, 5.0, 1.0),
                LinkSpec::new(3, 1, 1.0, 1.0),
            ],
            &[(1, 3), (1, 2)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn objective_examples() {
        assert_eq!(bilevel_objective(&[1.0], &[1.0], &[2.0], &[2.0], 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(bilevel_objective(&[2.0], &[1.0], &[3.0], &[1.0], 1.0, 1.0).unwrap(), 5.0);
        assert_eq!(bilevel_objective(&[2.0], &[1.0], &[3.0], &[1.0], 0.0, 1.0).unwrap(), 4.0);
        assert!(bilevel_objective(&[2.0], &[1.0, 0.0], &[3.0], &[1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn jacobian_columns() {
        let net = triangle();
        let f = LatencyFunction::linear(0.1);
        let jac = route_jacobian(&net, &f, &[0.0; 4]).unwrap();
        let dense: DenseMatrix<f64> = jac.to_dense();
        assert_eq!(dense.column(0), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(dense.column(1), vec![1.0, 0.0, 0.0, 0.0]);
        // link 1→2 is shared by both ODs
        assert_eq!(dense.row(0), &[1.0, 1.0]);
    }

    #[test]
    fn gradient_examples() {
        let jac = RouteJacobian {
            link_count: 1,
            columns: vec![vec![0]],
        };
        assert_eq!(gradient_f(&[1.0], &[1.0], &[3.0], &[1.0], &jac, 0.0, 1.0), vec![4.0]);
        assert_eq!(gradient_f(&[3.0], &[1.0], &[3.0], &[1.0], &jac, 0.5, 0.0), vec![2.0]);
        assert_eq!(gradient_f(&[1.0], &[1.0], &[1.0], &[1.0], &jac, 1.0, 1.0), vec![0.0]);
    }

    #[test]
    fn step_bounds() {
        assert_eq!(max_step(&[2.0, 1.0], &[-1.0, -4.0]), 0.25);
        assert_eq!(max_step(&[2.0, 1.0], &[1.0, 0.0]), 1.0);
        assert_eq!(masked_direction(&[0.0, 1.0], &[-1.0, -1.0], 0.0), vec![0.0, -1.0]);
        assert_eq!(masked_direction(&[0.0, 1.0], &[2.0, -1.0], 0.0), vec![2.0, -1.0]);
    }

    #[test]
    fn exact_observations_stop_immediately() {
        let net = triangle();
        let f = LatencyFunction::linear(0.1);
        let g0 = DemandVector::new(vec![2.0, 1.0]).unwrap();
        let settings = AdjustSettings::default();
        let x = equilibrium_flows(&net, &f, &g0, &settings.inner).unwrap();
        let (g, trace) = adjust_demand(&net, &f, &x, &g0, &settings).unwrap();
        assert_eq!(g, g0);
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].objective, 0.0);
    }

    #[test]
    fn recovers_demand_and_descends() {
        let net = triangle();
        let f = LatencyFunction::linear(0.1);
        let truth = DemandVector::new(vec![2.0, 1.0]).unwrap();
        let x_obs = solve_ue(&net, &truth, &f, &SolverSettings::new(5000, 1e-9, StepRule::Conjugate)).unwrap().flows;
        let g0 = DemandVector::new(vec![1.5, 1.2]).unwrap();
        let (g, trace) = adjust_demand(&net, &f, &x_obs, &g0, &AdjustSettings::default()).unwrap();
        for w in trace.rows.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        let last = trace.rows.last().unwrap().objective;
        assert!(last <= 0.5 * trace.rows[0].objective);
        assert!(g.iter().all(|&v| v >= 0.0));
        let d = trace.distances_to(&truth);
        assert!(d.last().unwrap() < &d[0]);
    }

    #[test]
    fn stationary_at_zero_boundary() {
        // observed flows zero; demand already zero on the OD pushing up flows
        let net = triangle();
        let f = LatencyFunction::linear(0.1);
        let g0 = DemandVector::new(vec![0.0, 0.0]).unwrap();
        let x_obs = [0.0; 4];
        let (g, trace) = adjust_demand(&net, &f, &x_obs, &g0, &AdjustSettings::default()).unwrap();
        assert_eq!(g, g0);
        assert_eq!(trace.rows.len(), 1);
        // flow only on a link no fastest route uses: F > 0 but ∇F = 0
        let x_obs = [0.0, 0.0, 1.0, 0.0];
        let (g, trace) = adjust_demand(&net, &f, &x_obs, &g0, &AdjustSettings::default()).unwrap();
        assert_eq!(trace.rows.len(), 2);
        assert_eq!(g, g0);
        assert_eq!(trace.rows[1].theta, 0.0);
        assert_eq!(trace.rows[1].objective, trace.rows[0].objective);
        assert_relative_eq!(trace.rows[0].objective, 1.0);
    }

    #[test]
    fn invalid_settings() {
        let net = triangle();
        let f = LatencyFunction::linear(0.1);
        let g0 = DemandVector::new(vec![1.0, 1.0]).unwrap();
        let s = AdjustSettings {
            rho: 1,
            ..AdjustSettings::default()
        };
        assert!(adjust_demand(&net, &f, &[0.0; 4], &g0, &s).is_err());
    }
}
