//! Convex quadratic programming.
//!
//! Solves `min ½xᵀQx + cᵀx` subject to `Ex = e`, `Gx ≤ h` and variable
//! bounds. The default method is the Clarabel interior-point solver. An
//! ADMM operator-splitting method is also available: it stacks all
//! constraints as `l ≤ Cx ≤ u`, alternates a proximal step on the
//! equilibrated objective with a projection onto `[l, u]`, and finishes by
//! solving the equality-constrained KKT system on the active set read off
//! the duals ("polishing"). Either way the returned point is certified by
//! its own KKT residuals.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix, Lu, SparseRows};
use crate::scalar::{dot, norm_inf, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram<T> {
    pub quadratic: DenseMatrix<T>,
    pub linear: Vec<T>,
    pub eq_matrix: SparseRows<T>,
    pub eq_rhs: Vec<T>,
    pub ineq_matrix: SparseRows<T>,
    pub ineq_rhs: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> QuadraticProgram<T> {
    /// Zero objective over `n` free variables.
    pub fn new(n: usize) -> Self {
        Self {
            quadratic: DenseMatrix::zeros(n, n),
            linear: vec![T::zero(); n],
            eq_matrix: SparseRows::new(n),
            eq_rhs: Vec::new(),
            ineq_matrix: SparseRows::new(n),
            ineq_rhs: Vec::new(),
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn add_equality(&mut self, row: Vec<(usize, T)>, rhs: T) {
        self.eq_matrix.push_row(row);
        self.eq_rhs.push(rhs);
    }

    /// Adds `row·x ≤ rhs`.
    pub fn add_inequality(&mut self, row: Vec<(usize, T)>, rhs: T) {
        self.ineq_matrix.push_row(row);
        self.ineq_rhs.push(rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lower: T, upper: T) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn objective(&self, x: &[T]) -> T {
        let qx = self.quadratic.mul_vec(x);
        T::lit(0.5) * dot(x, &qx) + dot(&self.linear, x)
    }

    fn validate(&mut self) -> Result<()> {
        let n = self.dim();
        let dims_ok = self.quadratic.nrows() == n
            && self.quadratic.ncols() == n
            && self.eq_matrix.ncols() == n
            && self.ineq_matrix.ncols() == n
            && self.eq_rhs.len() == self.eq_matrix.nrows()
            && self.ineq_rhs.len() == self.ineq_matrix.nrows()
            && self.lower.len() == n
            && self.upper.len() == n;
        if !dims_ok {
            return Err(Error::InvalidArgument("inconsistent QP dimensions".into()));
        }
        let scale = self.quadratic.max_abs().max(T::one());
        if self.quadratic.asymmetry() > T::lit(1e-6) * scale {
            return Err(Error::InvalidArgument("quadratic matrix is not symmetric".into()));
        }
        self.quadratic.symmetrize();
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err(Error::Infeasible);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    #[default]
    InteriorPoint,
    Admm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub method: QpMethod,
    /// Bound on every (relative) KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub scaling_iterations: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            method: QpMethod::InteriorPoint,
            tol: 1e-6,
            max_iter: 50_000,
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            scaling_iterations: 10,
            polish: true,
        }
    }
}

/// KKT residuals, each normalized by the magnitude of the terms it compares
/// (with a floor of one).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

impl fmt::Display for KktResiduals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stationarity {:.2e}, primal {:.2e}, dual {:.2e}, complementarity {:.2e}",
            self.stationarity, self.primal, self.dual, self.complementarity
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    /// Solved after a ridge was added to a near-singular quadratic term.
    SolvedWithRidge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Multipliers of the equality rows then the inequality rows.
    pub eq_duals: Vec<T>,
    pub ineq_duals: Vec<T>,
    pub objective: T,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub ridge: T,
    pub polished: bool,
}

/// Stacked `l ≤ Cx ≤ u` form.
struct Stacked<T> {
    c: SparseRows<T>,
    l: Vec<T>,
    u: Vec<T>,
    n_eq: usize,
    n_ineq: usize,
}

fn stack<T: Scalar>(qp: &QuadraticProgram<T>) -> Stacked<T> {
    let n = qp.dim();
    let mut c = SparseRows::new(n);
    let mut l = Vec::new();
    let mut u = Vec::new();
    for (row, &e) in qp.eq_matrix.rows().zip(&qp.eq_rhs) {
        c.push_row(row.to_vec());
        l.push(e);
        u.push(e);
    }
    for (row, &h) in qp.ineq_matrix.rows().zip(&qp.ineq_rhs) {
        c.push_row(row.to_vec());
        l.push(T::neg_infinity());
        u.push(h);
    }
    for j in 0..n {
        if qp.lower[j].is_finite() || qp.upper[j].is_finite() {
            c.push_row(vec![(j, T::one())]);
            l.push(qp.lower[j]);
            u.push(qp.upper[j]);
        }
    }
    Stacked {
        c,
        l,
        u,
        n_eq: qp.eq_rhs.len(),
        n_ineq: qp.ineq_rhs.len(),
    }
}

fn clamp<T: Scalar>(v: T, lo: T, hi: T) -> T {
    v.max(lo).min(hi)
}

fn clip_norm<T: Scalar>(v: T) -> T {
    if v < T::lit(1e-4) {
        T::one()
    } else {
        v.min(T::lit(1e4))
    }
}

/// Ruiz equilibration of `[Q Cᵀ; C 0]` plus a cost scale.
struct Scaling<T> {
    d: Vec<T>,
    e: Vec<T>,
    cost: T,
}

fn equilibrate<T: Scalar>(
    q: &mut DenseMatrix<T>,
    lin: &mut [T],
    c: &mut SparseRows<T>,
    l: &mut [T],
    u: &mut [T],
    iterations: usize,
) -> Scaling<T> {
    let n = lin.len();
    let m = c.nrows();
    let mut d = vec![T::one(); n];
    let mut e = vec![T::one(); m];
    for _ in 0..iterations {
        let mut col = vec![T::zero(); n];
        for j in 0..n {
            for i in 0..n {
                col[j] = col[j].max(q[(i, j)].abs());
            }
        }
        let mut row = vec![T::zero(); m];
        for (i, r) in c.rows().enumerate() {
            for &(j, v) in r {
                col[j] = col[j].max(v.abs());
                row[i] = row[i].max(v.abs());
            }
        }
        let dd: Vec<T> = col.iter().map(|&v| T::one() / clip_norm(v).sqrt()).collect();
        let de: Vec<T> = row.iter().map(|&v| T::one() / clip_norm(v).sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] *= dd[i] * dd[j];
            }
        }
        lin.iter_mut().zip(&dd).for_each(|(v, &s)| *v *= s);
        c.scale_entries(&de, &dd);
        d.iter_mut().zip(&dd).for_each(|(v, &s)| *v *= s);
        e.iter_mut().zip(&de).for_each(|(v, &s)| *v *= s);
    }
    for i in 0..m {
        l[i] *= e[i];
        u[i] *= e[i];
    }
    let mean_col = if n > 0 {
        (0..n)
            .map(|j| (0..n).fold(T::zero(), |a, i| a.max(q[(i, j)].abs())))
            .sum::<T>()
            / T::from_usize_lossy(n)
    } else {
        T::one()
    };
    let cost = T::one() / clip_norm(mean_col.max(norm_inf(lin)));
    q.scale(cost);
    lin.iter_mut().for_each(|v| *v *= cost);
    Scaling { d, e, cost }
}

struct Residuals<T> {
    prim: T,
    dual: T,
    prim_scale: T,
    dual_scale: T,
}

/// Unscaled ADMM residuals and their normalizers.
fn admm_residuals<T: Scalar>(
    q: &DenseMatrix<T>,
    lin: &[T],
    c: &SparseRows<T>,
    x: &[T],
    z: &[T],
    y: &[T],
    s: &Scaling<T>,
) -> Residuals<T> {
    let cx = c.mul_vec(x);
    let mut prim = T::zero();
    let mut cx_norm = T::zero();
    let mut z_norm = T::zero();
    for i in 0..cx.len() {
        let inv = T::one() / s.e[i];
        prim = prim.max(((cx[i] - z[i]) * inv).abs());
        cx_norm = cx_norm.max((cx[i] * inv).abs());
        z_norm = z_norm.max((z[i] * inv).abs());
    }
    let px = q.mul_vec(x);
    let cty = c.tr_mul_vec(y);
    let inv_cost = T::one() / s.cost;
    let mut dual = T::zero();
    let mut norms = [T::zero(); 3];
    for j in 0..x.len() {
        let inv = inv_cost / s.d[j];
        dual = dual.max(((px[j] + lin[j] + cty[j]) * inv).abs());
        norms[0] = norms[0].max((px[j] * inv).abs());
        norms[1] = norms[1].max((cty[j] * inv).abs());
        norms[2] = norms[2].max((lin[j] * inv).abs());
    }
    Residuals {
        prim,
        dual,
        prim_scale: cx_norm.max(z_norm),
        dual_scale: norms[0].max(norms[1]).max(norms[2]),
    }
}

/// Relative KKT residuals of `(x, y)` for the original problem, with `y`
/// the multipliers of the stacked rows.
fn kkt_residuals<T: Scalar>(
    q: &DenseMatrix<T>,
    lin: &[T],
    st: &Stacked<T>,
    x: &[T],
    y: &[T],
) -> KktResiduals {
    let one = T::one();
    let qx = q.mul_vec(x);
    let cty = st.c.tr_mul_vec(y);
    let stat_scale = one.max(norm_inf(&qx)).max(norm_inf(lin)).max(norm_inf(&cty));
    let stationarity = (0..x.len())
        .map(|j| (qx[j] + lin[j] + cty[j]).abs())
        .fold(T::zero(), T::max)
        / stat_scale;

    let cx = st.c.mul_vec(x);
    let finite_bounds = st
        .l
        .iter()
        .chain(&st.u)
        .filter(|v| v.is_finite())
        .fold(T::zero(), |m, v| m.max(v.abs()));
    let prim_scale = one.max(norm_inf(&cx)).max(finite_bounds);
    let mut primal = T::zero();
    let mut dual = T::zero();
    let mut comp = T::zero();
    for i in 0..cx.len() {
        let (l, u, yi) = (st.l[i], st.u[i], y[i]);
        primal = primal.max(l - cx[i]).max(cx[i] - u);
        if yi > T::zero() {
            if u.is_finite() {
                comp = comp.max(yi * (u - cx[i]).abs());
            } else {
                dual = dual.max(yi);
            }
        } else if yi < T::zero() {
            if l.is_finite() {
                comp = comp.max(-yi * (cx[i] - l).abs());
            } else {
                dual = dual.max(-yi);
            }
        }
    }
    let y_scale = one.max(norm_inf(y));
    KktResiduals {
        stationarity: stationarity.as_f64(),
        primal: (primal.max(T::zero()) / prim_scale).as_f64(),
        dual: (dual / y_scale).as_f64(),
        complementarity: (comp / (y_scale * prim_scale)).as_f64(),
    }
}

struct Admm<'a, T> {
    q: &'a DenseMatrix<T>,
    lin: &'a [T],
    c: &'a SparseRows<T>,
    l: &'a [T],
    u: &'a [T],
    sigma: T,
    rho: Vec<T>,
    factor: Cholesky<T>,
}

impl<'a, T: Scalar> Admm<'a, T> {
    fn rho_vector(rho: T, l: &[T], u: &[T]) -> Vec<T> {
        l.iter()
            .zip(u)
            .map(|(&lo, &hi)| {
                if lo == hi {
                    rho * T::lit(1e3)
                } else if !lo.is_finite() && !hi.is_finite() {
                    T::lit(1e-6)
                } else {
                    rho
                }
            })
            .collect()
    }

    fn factorize(q: &DenseMatrix<T>, c: &SparseRows<T>, sigma: T, rho: &[T]) -> Result<Cholesky<T>> {
        let mut k = q.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += sigma;
        }
        for (row, &r) in c.rows().zip(rho) {
            for &(i, vi) in row {
                for &(j, vj) in row {
                    k[(i, j)] += r * vi * vj;
                }
            }
        }
        Cholesky::factor(&k).ok_or_else(|| {
            Error::InvalidArgument("quadratic term is not positive semidefinite".into())
        })
    }

    fn set_rho(&mut self, rho: T) -> Result<()> {
        self.rho = Self::rho_vector(rho, self.l, self.u);
        self.factor = Self::factorize(self.q, self.c, self.sigma, &self.rho)?;
        Ok(())
    }

    fn step(&self, x: &mut [T], z: &mut [T], y: &mut [T], alpha: T) {
        let mut rhs: Vec<T> = x.iter().zip(self.lin).map(|(&xi, &qi)| self.sigma * xi - qi).collect();
        let w: Vec<T> = (0..z.len()).map(|i| self.rho[i] * z[i] - y[i]).collect();
        for (r, v) in rhs.iter_mut().zip(self.c.tr_mul_vec(&w)) {
            *r += v;
        }
        let xt = self.factor.solve(&rhs);
        let zt = self.c.mul_vec(&xt);
        for (xi, &xti) in x.iter_mut().zip(&xt) {
            *xi = alpha * xti + (T::one() - alpha) * *xi;
        }
        for i in 0..z.len() {
            let zh = alpha * zt[i] + (T::one() - alpha) * z[i];
            let zn = clamp(zh + y[i] / self.rho[i], self.l[i], self.u[i]);
            y[i] += self.rho[i] * (zh - zn);
            z[i] = zn;
        }
    }
}

/// Solves the reduced KKT system on the active set guessed from `y`.
/// Works in the scaled space; returns `(x, y)` on success.
fn polish<T: Scalar>(
    q: &DenseMatrix<T>,
    lin: &[T],
    c: &SparseRows<T>,
    l: &[T],
    u: &[T],
    z: &[T],
    y: &[T],
) -> Option<(Vec<T>, Vec<T>)> {
    let n = lin.len();
    let mut active: Vec<(usize, T)> = Vec::new();
    for i in 0..c.nrows() {
        if l[i] == u[i] || (l[i].is_finite() && z[i] - l[i] < -y[i]) {
            active.push((i, l[i]));
        } else if u[i].is_finite() && u[i] - z[i] < y[i] {
            active.push((i, u[i]));
        }
    }
    let na = active.len();
    let dim = n + na;
    let delta = T::lit(1e-9);
    let build = |reg: T| {
        let mut k = DenseMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = q[(i, j)];
            }
            k[(i, i)] += reg;
        }
        for (r, &(row, _)) in active.iter().enumerate() {
            for &(j, v) in c.row(row) {
                k[(n + r, j)] = v;
                k[(j, n + r)] = v;
            }
            k[(n + r, n + r)] = -reg;
        }
        k
    };
    let exact = build(T::zero());
    let lu = Lu::factor(&build(delta))?;
    let mut rhs = vec![T::zero(); dim];
    for j in 0..n {
        rhs[j] = -lin[j];
    }
    for (r, &(_, b)) in active.iter().enumerate() {
        rhs[n + r] = b;
    }
    let mut sol = lu.solve(&rhs);
    for _ in 0..5 {
        let ks = exact.mul_vec(&sol);
        let res: Vec<T> = rhs.iter().zip(&ks).map(|(&b, &k)| b - k).collect();
        let corr = lu.solve(&res);
        sol.iter_mut().zip(&corr).for_each(|(s, &c)| *s += c);
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol[..n].to_vec();
    let mut yf = vec![T::zero(); c.nrows()];
    for (r, &(row, _)) in active.iter().enumerate() {
        yf[row] = sol[n + r];
    }
    Some((x, yf))
}

fn unscale<T: Scalar>(x: &[T], y: &[T], s: &Scaling<T>) -> (Vec<T>, Vec<T>) {
    let xu = x.iter().zip(&s.d).map(|(&v, &d)| v * d).collect();
    let yu = y.iter().zip(&s.e).map(|(&v, &e)| v * e / s.cost).collect();
    (xu, yu)
}

/// Solves the QP to KKT residuals below `settings.tol`.
pub fn solve_qp<T: Scalar>(qp: &QuadraticProgram<T>, settings: &QpSettings) -> Result<QpSolution<T>> {
    let mut qp = qp.clone();
    qp.validate()?;
    match settings.method {
        QpMethod::InteriorPoint => solve_interior_point(&qp, settings),
        QpMethod::Admm => solve_admm(qp, settings),
    }
}

fn solve_interior_point<T: Scalar>(qp: &QuadraticProgram<T>, settings: &QpSettings) -> Result<QpSolution<T>> {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT, ZeroConeT,
    };

    let n = qp.dim();
    let st = stack(qp);
    let f = |v: T| v.as_f64();

    // l = u rows go to the zero cone, finite sides of the rest to the
    // nonnegative cone as `Cx ≤ u` and `−Cx ≤ −l`
    let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut push = |row: &[(usize, T)], sign: f64, rhs: f64, b: &mut Vec<f64>| {
        let r = b.len();
        for &(j, v) in row {
            ri.push(r);
            ci.push(j);
            vals.push(sign * f(v));
        }
        b.push(sign * rhs);
    };
    // (stacked row, sign) of every solver row
    let mut origin: Vec<(usize, f64)> = Vec::new();
    for (i, row) in st.c.rows().enumerate() {
        if st.l[i] == st.u[i] {
            push(row, 1.0, f(st.u[i]), &mut b);
            origin.push((i, 1.0));
        }
    }
    let n_zero = b.len();
    for (i, row) in st.c.rows().enumerate() {
        if st.l[i] == st.u[i] {
            continue;
        }
        if st.u[i].is_finite() {
            push(row, 1.0, f(st.u[i]), &mut b);
            origin.push((i, 1.0));
        }
        if st.l[i].is_finite() {
            push(row, -1.0, f(st.l[i]), &mut b);
            origin.push((i, -1.0));
        }
    }
    let m = b.len();
    let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..n {
        for i in 0..=j {
            let v = f(qp.quadratic[(i, j)]);
            if v != 0.0 {
                pi.push(i);
                pj.push(j);
                pv.push(v);
            }
        }
    }
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
    let q: Vec<f64> = qp.linear.iter().map(|&v| f(v)).collect();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_zero > 0 {
        cones.push(ZeroConeT(n_zero));
    }
    if m > n_zero {
        cones.push(NonnegativeConeT(m - n_zero));
    }
    let ip_settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iter.min(u32::MAX as usize) as u32)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("interior-point settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, ip_settings)
        .map_err(|e| Error::InvalidArgument(format!("interior-point setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => return Err(Error::Infeasible),
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => return Err(Error::Unbounded),
        _ => {}
    }

    let x: Vec<T> = sol.x.iter().map(|&v| T::lit(v)).collect();
    let mut y = vec![T::zero(); st.c.nrows()];
    for (r, &(i, sign)) in origin.iter().enumerate() {
        y[i] += T::lit(sign * sol.z[r]);
    }
    let mut res = kkt_residuals(&qp.quadratic, &qp.linear, &st, &x, &y);
    let mut out = (x, y);
    let mut polished = false;
    // interior points stop just inside active bounds; the active-set solve
    // lands on them exactly
    if settings.polish {
        let (mut qs, mut lin, mut cs) = (qp.quadratic.clone(), qp.linear.clone(), st.c.clone());
        let (mut ls, mut us) = (st.l.clone(), st.u.clone());
        let sc = equilibrate(&mut qs, &mut lin, &mut cs, &mut ls, &mut us, settings.scaling_iterations);
        let xs: Vec<T> = out.0.iter().zip(&sc.d).map(|(&v, &d)| v / d).collect();
        let ys: Vec<T> = out.1.iter().zip(&sc.e).map(|(&v, &e)| v * sc.cost / e).collect();
        let zs = cs.mul_vec(&xs);
        if let Some((xp, yp)) = polish(&qs, &lin, &cs, &ls, &us, &zs, &ys) {
            let (xp, yp) = unscale(&xp, &yp, &sc);
            let pres = kkt_residuals(&qp.quadratic, &qp.linear, &st, &xp, &yp);
            if pres.max() <= res.max().max(settings.tol) {
                res = pres;
                out = (xp, yp);
                polished = true;
            }
        }
    }
    let iterations = sol.iterations as usize;
    if res.max() > settings.tol {
        return Err(Error::MaxIterations {
            iterations,
            residuals: res,
            x: out.0.iter().map(|v| v.as_f64()).collect(),
        });
    }
    let (x, y) = out;
    Ok(QpSolution {
        objective: qp.objective(&x),
        eq_duals: y[..st.n_eq].to_vec(),
        ineq_duals: y[st.n_eq..st.n_eq + st.n_ineq].to_vec(),
        x,
        status: QpStatus::Solved,
        iterations,
        residuals: res,
        ridge: T::zero(),
        polished,
    })
}

fn solve_admm<T: Scalar>(qp: QuadraticProgram<T>, settings: &QpSettings) -> Result<QpSolution<T>> {
    let n = qp.dim();
    let tol = T::lit(settings.tol);

    // near-singular quadratic term gets a small ridge
    let mut ridge = T::zero();
    let max_diag = (0..n).fold(T::zero(), |m, i| m.max(qp.quadratic[(i, i)].abs()));
    let singular = n > 0
        && match Cholesky::factor(&qp.quadratic) {
            Some(ch) => {
                let p = ch.min_pivot();
                p * p <= T::lit(1e-12) * max_diag
            }
            None => true,
        };
    if singular {
        ridge = T::lit(1e-10) * qp.quadratic.trace() / T::from_usize_lossy(n.max(1));
    }
    let mut q_work = qp.quadratic.clone();
    for i in 0..n {
        q_work[(i, i)] += ridge;
    }

    let st = stack(&qp);
    let mut qs = q_work.clone();
    let mut lin = qp.linear.clone();
    let mut cs = st.c.clone();
    let mut ls = st.l.clone();
    let mut us = st.u.clone();
    let scaling = equilibrate(&mut qs, &mut lin, &mut cs, &mut ls, &mut us, settings.scaling_iterations);
    let m = cs.nrows();
    let sigma = T::lit(settings.sigma);

    // start at the unconstrained minimizer projected onto the bounds
    let mut x0 = {
        let mut k = q_work.clone();
        for i in 0..n {
            k[(i, i)] += sigma;
        }
        let neg_c: Vec<T> = qp.linear.iter().map(|&v| -v).collect();
        Cholesky::factor(&k).map_or(vec![T::zero(); n], |ch| ch.solve(&neg_c))
    };
    for j in 0..n {
        x0[j] = clamp(x0[j], qp.lower[j], qp.upper[j]);
    }
    let mut x: Vec<T> = x0.iter().zip(&scaling.d).map(|(&v, &d)| v / d).collect();
    let mut z: Vec<T> = cs.mul_vec(&x).into_iter().enumerate().map(|(i, v)| clamp(v, ls[i], us[i])).collect();
    let mut y = vec![T::zero(); m];

    let mut rho = T::lit(settings.rho);
    let mut admm = Admm {
        q: &qs,
        lin: &lin,
        c: &cs,
        l: &ls,
        u: &us,
        sigma,
        rho: Admm::rho_vector(rho, &ls, &us),
        factor: Admm::factorize(&qs, &cs, sigma, &Admm::rho_vector(rho, &ls, &us))?,
    };
    let alpha = T::lit(settings.relaxation);
    let cert_tol = T::lit(1e-6);
    let objective_of = |xu: &[T]| qp.objective(xu);

    let mut best: Option<(f64, Vec<T>, Vec<T>)> = None;
    for iter in 1..=settings.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();
        admm.step(&mut x, &mut z, &mut y, alpha);

        let check = iter % 10 == 0 || iter == settings.max_iter;
        if !check {
            continue;
        }
        let r = admm_residuals(&qs, &lin, &cs, &x, &z, &y, &scaling);
        let prim_ok = r.prim <= tol + tol * r.prim_scale;
        let dual_ok = r.dual <= tol + tol * r.dual_scale;

        // ADMM can stall short of tol on degenerate problems while the
        // active set is already right, so polishing is also tried periodically
        let stalled = settings.polish && iter % 500 == 0;
        if (prim_ok && dual_ok) || stalled {
            let (xu, yu) = unscale(&x, &y, &scaling);
            let mut res = kkt_residuals(&qp.quadratic, &qp.linear, &st, &xu, &yu);
            let mut sol = (xu, yu);
            let mut polished = false;
            if settings.polish {
                if let Some((xp, yp)) = polish(&qs, &lin, &cs, &ls, &us, &z, &y) {
                    let (xpu, ypu) = unscale(&xp, &yp, &scaling);
                    let pres = kkt_residuals(&qp.quadratic, &qp.linear, &st, &xpu, &ypu);
                    if pres.max() <= res.max() || pres.max() <= settings.tol {
                        res = pres;
                        sol = (xpu, ypu);
                        polished = true;
                    }
                }
            }
            if res.max() <= settings.tol {
                let (xu, yu) = sol;
                return Ok(QpSolution {
                    objective: objective_of(&xu),
                    eq_duals: yu[..st.n_eq].to_vec(),
                    ineq_duals: yu[st.n_eq..st.n_eq + st.n_ineq].to_vec(),
                    x: xu,
                    status: if ridge > T::zero() {
                        QpStatus::SolvedWithRidge
                    } else {
                        QpStatus::Solved
                    },
                    iterations: iter,
                    residuals: res,
                    ridge,
                    polished,
                });
            }
            if best.as_ref().is_none_or(|b| res.max() < b.0) {
                best = Some((res.max(), sol.0, sol.1));
            }
        } else if best.is_none() || iter == settings.max_iter {
            let (xu, yu) = unscale(&x, &y, &scaling);
            let res = kkt_residuals(&qp.quadratic, &qp.linear, &st, &xu, &yu);
            if best.as_ref().is_none_or(|b| res.max() < b.0) {
                best = Some((res.max(), xu, yu));
            }
        }

        // infeasibility certificates from iterate differences (unscaled)
        let dy: Vec<T> = y
            .iter()
            .zip(&y_prev)
            .zip(&scaling.e)
            .map(|((&a, &b), &e)| (a - b) * e / scaling.cost)
            .collect();
        let dy_norm = norm_inf(&dy);
        if dy_norm > T::zero() {
            let cty = st.c.tr_mul_vec(&dy);
            let mut support = T::zero();
            let mut finite = true;
            for i in 0..m {
                if dy[i] > T::zero() {
                    if st.u[i].is_finite() {
                        support += st.u[i] * dy[i];
                    } else {
                        finite = false;
                    }
                } else if dy[i] < T::zero() {
                    if st.l[i].is_finite() {
                        support += st.l[i] * dy[i];
                    } else {
                        finite = false;
                    }
                }
            }
            if finite && norm_inf(&cty) <= cert_tol * dy_norm && support < -cert_tol * dy_norm {
                return Err(Error::Infeasible);
            }
        }
        let dx: Vec<T> = x
            .iter()
            .zip(&x_prev)
            .zip(&scaling.d)
            .map(|((&a, &b), &d)| (a - b) * d)
            .collect();
        let dx_norm = norm_inf(&dx);
        if dx_norm > T::zero() {
            let qdx = qp.quadratic.mul_vec(&dx);
            let cdx = st.c.mul_vec(&dx);
            let eps = cert_tol * dx_norm;
            let recession = (0..m).all(|i| {
                (!st.u[i].is_finite() || cdx[i] <= eps) && (!st.l[i].is_finite() || cdx[i] >= -eps)
            });
            if recession && norm_inf(&qdx) <= eps && dot(&qp.linear, &dx) < -eps {
                return Err(Error::Unbounded);
            }
        }

        // adaptive step size
        if iter % 50 == 0 && r.prim > T::zero() && r.dual > T::zero() {
            let num = r.prim / r.prim_scale.max(T::lit(1e-10));
            let den = r.dual / r.dual_scale.max(T::lit(1e-10));
            let ratio = (num / den).sqrt();
            if ratio > T::lit(5.0) || ratio < T::lit(0.2) {
                rho = clamp(rho * ratio, T::lit(1e-6), T::lit(1e6));
                admm.set_rho(rho)?;
            }
        }
    }

    let (xu, yu) = match best {
        Some((_, xb, yb)) => (xb, yb),
        None => unscale(&x, &y, &scaling),
    };
    let res = kkt_residuals(&qp.quadratic, &qp.linear, &st, &xu, &yu);
    Err(Error::MaxIterations {
        iterations: settings.max_iter,
        residuals: res,
        x: xu.iter().map(|v| v.as_f64()).collect(),
    })
}

/// Any point satisfying `Ex = e`, `Gx ≤ h` and the bounds.
pub fn solve_feasibility<T: Scalar>(
    eq: (&SparseRows<T>, &[T]),
    ineq: (&SparseRows<T>, &[T]),
    lower: &[T],
    upper: &[T],
    settings: &QpSettings,
) -> Result<Vec<T>> {
    let n = lower.len();
    let mut qp = QuadraticProgram::new(n);
    qp.eq_matrix = eq.0.clone();
    qp.eq_rhs = eq.1.to_vec();
    qp.ineq_matrix = ineq.0.clone();
    qp.ineq_rhs = ineq.1.to_vec();
    qp.lower = lower.to_vec();
    qp.upper = upper.to_vec();
    Ok(solve_qp(&qp, settings)?.x)
}
