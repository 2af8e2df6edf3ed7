//! Generalized least-squares OD demand estimation from repeated link counts.
//!
//! With route flows `ξ = Pᵀg` the GLS fit of link flows `Aξ` to observations
//! `x⁽ᵏ⁾` weighted by the inverse sample covariance is a QP in `ξ ≥ 0`
//! (P1). Any nonnegative `ξ` then decomposes into a demand vector and a
//! row-stochastic route-choice matrix by summing route flows per OD (P2).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::net::{fastest_routes, link_route_incidence, route_set, DemandVector, Network, RouteSet, RouteSettings};
use crate::qp::{solve_qp, QpSettings, QuadraticProgram};
use crate::scalar::{dot, Scalar};

/// Mean, covariance and inverse covariance of `K` link-flow samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStatistics<T> {
    pub mean: Vec<T>,
    pub covariance: DenseMatrix<T>,
    pub inverse: DenseMatrix<T>,
    pub samples: usize,
    /// Diagonal ridge added before inversion; zero when `S` was invertible.
    pub ridge: T,
}

/// Unbiased sample statistics. A singular covariance gets a ridge
/// `λ = 1e-8·trace(S)/|A|` (or `1e-8` when `S = 0`).
pub fn sample_statistics<T: Scalar>(flows: &[Vec<T>]) -> Result<SampleStatistics<T>> {
    let k = flows.len();
    if k < 2 {
        return Err(Error::TooFewSamples { found: k });
    }
    let dim = flows[0].len();
    if let Some(bad) = flows.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "flow sample",
            expected: dim,
            found: bad.len(),
        });
    }
    let kt = T::from_usize_lossy(k);
    let mut mean = vec![T::zero(); dim];
    for x in flows {
        mean.iter_mut().zip(x).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= kt);

    let mut cov = DenseMatrix::zeros(dim, dim);
    for x in flows {
        let dev: Vec<T> = x.iter().zip(&mean).map(|(&v, &m)| v - m).collect();
        for i in 0..dim {
            if dev[i] == T::zero() {
                continue;
            }
            for j in 0..dim {
                cov[(i, j)] += dev[i] * dev[j];
            }
        }
    }
    cov.scale(T::one() / (kt - T::one()));
    cov.symmetrize();

    let max_diag = (0..dim).fold(T::zero(), |m, i| m.max(cov[(i, i)]));
    let singular = match Cholesky::factor(&cov) {
        Some(ch) => {
            let p = ch.min_pivot();
            p * p <= T::lit(1e-12) * max_diag
        }
        None => true,
    };
    let mut ridge = T::zero();
    let mut reg = cov.clone();
    if singular {
        let tr = cov.trace();
        ridge = if tr > T::zero() {
            T::lit(1e-8) * tr / T::from_usize_lossy(dim.max(1))
        } else {
            T::lit(1e-8)
        };
        for i in 0..dim {
            reg[(i, i)] += ridge;
        }
    }
    let ch = Cholesky::factor(&reg)
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite after regularization".into()))?;
    let mut inverse = DenseMatrix::zeros(dim, dim);
    let mut e = vec![T::zero(); dim];
    for j in 0..dim {
        e[j] = T::one();
        let col = ch.solve(&e);
        e[j] = T::zero();
        for i in 0..dim {
            inverse[(i, j)] = col[i];
        }
    }
    inverse.symmetrize();
    Ok(SampleStatistics {
        mean,
        covariance: cov,
        inverse,
        samples: k,
        ridge,
    })
}

fn gls_terms<T: Scalar>(a: &DenseMatrix<T>, stats: &SampleStatistics<T>, flows: &[Vec<T>]) -> Result<(DenseMatrix<T>, Vec<T>)> {
    if a.nrows() != stats.mean.len() {
        return Err(Error::DimensionMismatch {
            what: "incidence rows",
            expected: stats.mean.len(),
            found: a.nrows(),
        });
    }
    // SA = S⁻¹A, Q = AᵀS⁻¹A, b = Σ_k AᵀS⁻¹x⁽ᵏ⁾
    let sa = stats.inverse.matmul(a);
    let q = a.transpose().matmul(&sa);
    let mut sum = vec![T::zero(); a.nrows()];
    for x in flows {
        if x.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                what: "flow sample",
                expected: a.nrows(),
                found: x.len(),
            });
        }
        sum.iter_mut().zip(x).for_each(|(s, &v)| *s += v);
    }
    let b = sa.tr_mul_vec(&sum);
    Ok((q, b))
}

/// `(K/2) ξᵀQξ − bᵀξ`.
pub fn p1_objective<T: Scalar>(
    a: &DenseMatrix<T>,
    stats: &SampleStatistics<T>,
    flows: &[Vec<T>],
    xi: &[T],
) -> Result<T> {
    let (q, b) = gls_terms(a, stats, flows)?;
    let k = T::from_usize_lossy(flows.len());
    Ok(T::lit(0.5) * k * dot(xi, &q.mul_vec(xi)) - dot(&b, xi))
}

/// `Σ_k (x⁽ᵏ⁾ − APᵀg)ᵀ S⁻¹ (x⁽ᵏ⁾ − APᵀg)`.
pub fn p0_objective<T: Scalar>(
    a: &DenseMatrix<T>,
    stats: &SampleStatistics<T>,
    flows: &[Vec<T>],
    choice: &RouteChoiceMatrix<T>,
    demand: &DemandVector<T>,
) -> Result<T> {
    let xi = choice.route_flows(demand);
    let fitted = a.mul_vec(&xi);
    let mut total = T::zero();
    for x in flows {
        let r: Vec<T> = x.iter().zip(&fitted).map(|(&v, &f)| v - f).collect();
        total += dot(&r, &stats.inverse.mul_vec(&r));
    }
    Ok(total)
}

/// Nonnegative route flows minimizing the GLS fit.
pub fn solve_p1<T: Scalar>(a: &DenseMatrix<T>, stats: &SampleStatistics<T>, flows: &[Vec<T>]) -> Result<Vec<T>> {
    let (mut q, b) = gls_terms(a, stats, flows)?;
    let routes = a.ncols();
    q.scale(T::from_usize_lossy(flows.len()));
    let mut qp = QuadraticProgram::new(routes);
    qp.quadratic = q;
    qp.linear = b.iter().map(|&v| -v).collect();
    for r in 0..routes {
        qp.set_bounds(r, T::zero(), T::infinity());
    }
    let sol = solve_qp(&qp, &QpSettings::default())?;
    Ok(sol.x.into_iter().map(|v| v.max(T::zero())).collect())
}

/// Row-stochastic OD-by-route choice probabilities, stored per OD over the
/// OD's own route columns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RouteChoiceMatrix<T> {
    columns: Vec<std::ops::Range<usize>>,
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> RouteChoiceMatrix<T> {
    pub fn od_count(&self) -> usize {
        self.rows.len()
    }

    pub fn route_count(&self) -> usize {
        self.columns.last().map_or(0, |r| r.end)
    }

    /// `p_ir` for route column `r` (zero outside OD `i`'s routes).
    pub fn get(&self, i: usize, r: usize) -> T {
        let cols = &self.columns[i];
        if cols.contains(&r) {
            self.rows[i][r - cols.start]
        } else {
            T::zero()
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i]
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.iter().copied().sum()).collect()
    }

    /// `Pᵀg`.
    pub fn route_flows(&self, demand: &[T]) -> Vec<T> {
        let mut xi = vec![T::zero(); self.route_count()];
        for (i, (cols, row)) in self.columns.iter().zip(&self.rows).enumerate() {
            for (r, &p) in cols.clone().zip(row) {
                xi[r] += p * demand[i];
            }
        }
        xi
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.od_count(), self.route_count());
        for (i, (cols, row)) in self.columns.iter().zip(&self.rows).enumerate() {
            for (r, &p) in cols.clone().zip(row) {
                m[(i, r)] = p;
            }
        }
        m
    }
}

/// Splits route flows into demand and choice probabilities:
/// `gᵢ = Σ_{r∈Rᵢ} ξ_r`, `p_ir = ξ_r / gᵢ` (uniform when `gᵢ = 0`).
pub fn solve_p2<T: Scalar>(routes: &RouteSet, xi: &[T]) -> Result<(RouteChoiceMatrix<T>, DemandVector<T>)> {
    if xi.len() != routes.route_count() {
        return Err(Error::DimensionMismatch {
            what: "route flows",
            expected: routes.route_count(),
            found: xi.len(),
        });
    }
    if xi.iter().any(|&v| !(v >= T::zero())) {
        return Err(Error::InvalidArgument("route flows must be nonnegative".into()));
    }
    let columns = routes.od_columns();
    let mut rows = Vec::with_capacity(columns.len());
    let mut g = Vec::with_capacity(columns.len());
    for cols in &columns {
        let block = &xi[cols.clone()];
        let total: T = block.iter().copied().sum();
        let row = if total > T::zero() {
            block.iter().map(|&v| v / total).collect()
        } else {
            vec![T::one() / T::from_usize_lossy(block.len().max(1)); block.len()]
        };
        rows.push(row);
        g.push(total);
    }
    Ok((RouteChoiceMatrix { columns, rows }, DemandVector::new(g)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct OdEstimateSettings {
    pub routes: RouteSettings,
    /// Use only each OD's free-flow fastest route.
    pub single_route: bool,
}

#[derive(Clone, Debug)]
pub struct OdEstimate<T> {
    pub demand: DemandVector<T>,
    pub choice: RouteChoiceMatrix<T>,
    pub route_flows: Vec<T>,
    pub routes: RouteSet,
    pub stats: SampleStatistics<T>,
    /// Rank of the link-route incidence; below the route count the route
    /// flows are not identifiable from link counts.
    pub incidence_rank: usize,
}

/// Full pipeline: routes at free-flow times, incidence, sample statistics,
/// P1 and P2.
pub fn initial_demand<T: Scalar>(
    network: &Network<T>,
    flows: &[Vec<T>],
    settings: &OdEstimateSettings,
) -> Result<OdEstimate<T>> {
    for x in flows {
        network.check_len("observed flows", x.len())?;
    }
    let stats = sample_statistics(flows)?;
    let weights = network.free_flow_times();
    let routes = if settings.single_route {
        RouteSet {
            per_od: fastest_routes(network, &weights)?.into_iter().map(|r| vec![r]).collect(),
        }
    } else {
        route_set(network, &weights, settings.routes)?
    };
    let a: DenseMatrix<T> = link_route_incidence(network.link_count(), &routes)?;
    let incidence_rank = a.rank();
    if incidence_rank < routes.route_count() {
        log::warn!(
            "link-route incidence has rank {incidence_rank} < {} routes; route flows are not identifiable",
            routes.route_count()
        );
    }
    let xi = solve_p1(&a, &stats, flows)?;
    let (choice, demand) = solve_p2(&routes, &xi)?;
    Ok(OdEstimate {
        demand,
        choice,
        route_flows: xi,
        routes,
        stats,
        incidence_rank,
    })
}
