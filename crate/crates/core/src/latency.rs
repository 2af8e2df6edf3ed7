//! Shared polynomial latency family `tₐ(x) = tₐ⁰·f(x/mₐ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Link;
use crate::scalar::Scalar;

pub const MAX_DEGREE: usize = 8;
/// Grid resolution of the numerical monotonicity and convexity checks.
pub const CHECK_GRID_POINTS: usize = 256;

/// `f(z) = Σᵢ βᵢ zⁱ` with `β₀ = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatencyRepr<T>", into = "LatencyRepr<T>", bound = "T: Scalar")]
pub struct LatencyFunction<T> {
    coefficients: Vec<T>,
    /// Kernel offset `c` the coefficients were estimated with (0 if unknown).
    offset_c: T,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LatencyRepr<T> {
    degree: usize,
    offset_c: T,
    coefficients: Vec<T>,
}

impl<T: Scalar> TryFrom<LatencyRepr<T>> for LatencyFunction<T> {
    type Error = Error;
    fn try_from(r: LatencyRepr<T>) -> Result<Self> {
        if r.coefficients.len() != r.degree + 1 {
            return Err(Error::InvalidLatency(format!(
                "degree {} needs {} coefficients, found {}",
                r.degree,
                r.degree + 1,
                r.coefficients.len()
            )));
        }
        Self::with_offset(r.coefficients, r.offset_c)
    }
}

impl<T: Scalar> From<LatencyFunction<T>> for LatencyRepr<T> {
    fn from(f: LatencyFunction<T>) -> Self {
        Self {
            degree: f.degree(),
            offset_c: f.offset_c,
            coefficients: f.coefficients,
        }
    }
}

impl<T: Scalar> LatencyFunction<T> {
    pub fn new(coefficients: Vec<T>) -> Result<Self> {
        Self::with_offset(coefficients, T::zero())
    }

    /// `β₀` within `1e-9` of one is snapped to exactly one.
    pub fn with_offset(mut coefficients: Vec<T>, offset_c: T) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidLatency("no coefficients".into()));
        }
        if coefficients.len() > MAX_DEGREE + 1 {
            return Err(Error::InvalidLatency(format!(
                "degree {} exceeds the cap of {MAX_DEGREE}",
                coefficients.len() - 1
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidLatency("non-finite coefficient".into()));
        }
        if (coefficients[0] - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidLatency(format!(
                "β₀ must equal 1, got {}",
                coefficients[0]
            )));
        }
        if !(offset_c >= T::zero()) {
            return Err(Error::InvalidLatency(format!(
                "kernel offset must be nonnegative, got {offset_c}"
            )));
        }
        coefficients[0] = T::one();
        Ok(Self {
            coefficients,
            offset_c,
        })
    }

    /// `f(z) = 1 + 0.15 z⁴`.
    pub fn bpr() -> Self {
        Self::new(vec![T::one(), T::zero(), T::zero(), T::zero(), T::lit(0.15)])
            .expect("valid BPR coefficients")
    }

    /// `f(z) = 1 + slope·z`.
    pub fn linear(slope: T) -> Self {
        Self::new(vec![T::one(), slope]).expect("valid linear coefficients")
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn offset_c(&self) -> T {
        self.offset_c
    }

    fn check_ratio(z: T) -> Result<()> {
        if z < T::zero() || z.is_nan() {
            return Err(Error::NegativeCongestionRatio { z: z.as_f64() });
        }
        Ok(())
    }

    pub fn evaluate(&self, z: T) -> Result<T> {
        Self::check_ratio(z)?;
        Ok(self.value(z))
    }

    /// `f(z)` without the sign check.
    #[inline]
    pub fn value(&self, z: T) -> T {
        self.coefficients
            .iter()
            .rev()
            .fold(T::zero(), |acc, &b| acc * z + b)
    }

    /// `f'(z)`
    #[inline]
    pub fn slope(&self, z: T) -> T {
        self.coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(T::zero(), |acc, (i, &b)| acc * z + b * T::from_usize_lossy(i))
    }

    /// `f''(z)`
    pub fn curvature(&self, z: T) -> T {
        self.coefficients
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(T::zero(), |acc, (i, &b)| {
                acc * z + b * T::from_usize_lossy(i * (i - 1))
            })
    }

    /// `∫₀^z f(u) du`
    pub fn integral(&self, z: T) -> T {
        self.coefficients
            .iter()
            .enumerate()
            .rev()
            .fold(T::zero(), |acc, (i, &b)| acc * z + b / T::from_usize_lossy(i + 1))
            * z
    }

    /// `∫₀^z u·f'(u) du = Σᵢ i·βᵢ z^{i+1}/(i+1)`
    pub fn weighted_slope_integral(&self, z: T) -> T {
        self.coefficients
            .iter()
            .enumerate()
            .rev()
            .fold(T::zero(), |acc, (i, &b)| {
                acc * z + b * T::from_usize_lossy(i) / T::from_usize_lossy(i + 1)
            })
            * z
    }

    /// Factor of the marginal latency, `g(z) = f(z) + z f'(z) = Σ (i+1)βᵢ zⁱ`.
    pub fn marginal_factor(&self) -> Self {
        Self {
            coefficients: self
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, &b)| b * T::from_usize_lossy(i + 1))
                .collect(),
            offset_c: self.offset_c,
        }
    }

    fn grid(z_max: T) -> impl Iterator<Item = T> {
        let steps = T::from_usize_lossy(CHECK_GRID_POINTS - 1);
        (0..CHECK_GRID_POINTS).map(move |k| z_max * T::from_usize_lossy(k) / steps)
    }

    /// Whether `f` is non-decreasing on a grid over `[0, z_max]`.
    pub fn is_monotone_on(&self, z_max: T) -> bool {
        let tol = T::lit(1e3) * T::EPS;
        let mut prev = self.value(T::zero());
        for z in Self::grid(z_max).skip(1) {
            let v = self.value(z);
            if v < prev - tol * prev.abs().max(T::one()) {
                return false;
            }
            prev = v;
        }
        true
    }

    /// Whether `z·f(z)` is convex on a grid over `[0, z_max]`, i.e.
    /// `2f'(z) + z f''(z) ≥ 0`.
    pub fn is_total_cost_convex_on(&self, z_max: T) -> bool {
        let tol = T::lit(1e3) * T::EPS;
        Self::grid(z_max).all(|z| {
            let v = T::lit(2.0) * self.slope(z) + z * self.curvature(z);
            v >= -tol * self.value(z).abs().max(T::one())
        })
    }

    /// Evaluation range used by the grid checks for an observed maximum
    /// congestion ratio.
    pub fn check_range(max_ratio: T) -> T {
        (T::lit(1.5) * max_ratio).max(T::EPS)
    }
}

/// `tₐ(x) = tₐ⁰ f(x/mₐ)`
pub fn link_latency<T: Scalar>(link: &Link<T>, x: T, f: &LatencyFunction<T>) -> Result<T> {
    Ok(link.free_flow_time * f.evaluate(x / link.capacity)?)
}

/// `dtₐ/dx`
pub fn link_latency_slope<T: Scalar>(link: &Link<T>, x: T, f: &LatencyFunction<T>) -> T {
    link.free_flow_time / link.capacity * f.slope(x / link.capacity)
}

/// `tₐ(x) + x·ṫₐ(x)`, the cost one more vehicle imposes on the system.
pub fn marginal_latency<T: Scalar>(link: &Link<T>, x: T, f: &LatencyFunction<T>) -> Result<T> {
    let z = x / link.capacity;
    Ok(link.free_flow_time * (f.evaluate(z)? + z * f.slope(z)))
}

/// `∫₀^x tₐ(s) ds = tₐ⁰ Σ βᵢ x^{i+1} / ((i+1) mₐⁱ)`
pub fn beckmann_term<T: Scalar>(link: &Link<T>, x: T, f: &LatencyFunction<T>) -> Result<T> {
    let z = x / link.capacity;
    LatencyFunction::<T>::check_ratio(z)?;
    Ok(link.free_flow_time * link.capacity * f.integral(z))
}
