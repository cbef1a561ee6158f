//! Conway–Maxwell–Poisson (CMP) count distribution.
//!
//! `Pr(X = x) = λ^x / ((x!)^ν Z(λ, ν))` with `Z(λ, ν) = Σ_k λ^k / (k!)^ν`.
//! ν = 1 is the Poisson distribution, ν = 0 (with λ < 1) the geometric
//! distribution, and ν → ∞ approaches a Bernoulli with success probability
//! λ / (1 + λ).
//!
//! All arithmetic is carried out in log space so that large λ and small ν
//! do not overflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A term is dropped from `Z` once it falls below this fraction of the running sum.
pub const Z_RELATIVE_TOLERANCE: f64 = 1e-12;
/// Hard cap on the number of terms summed for `Z`.
pub const Z_MAX_TERMS: usize = 10_000;
/// Truncation point of the first moment.
pub const DEFAULT_MEAN_TRUNCATION: u32 = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CmpError {
    #[error("CMP rate must be positive and finite, got λ = {0}")]
    InvalidLambda(f64),
    #[error("CMP dispersion must be nonnegative and finite, got ν = {0}")]
    InvalidNu(f64),
    #[error("CMP with ν = 0 requires λ < 1 (got λ = {0}); the normalizing constant diverges")]
    Undefined(f64),
    #[error("CMP normalizing constant did not converge within {terms} terms (λ = {lambda}, ν = {nu})")]
    NonConvergence { lambda: f64, nu: f64, terms: usize },
}

/// Parameters of one CMP marginal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCmpParams", into = "RawCmpParams")]
pub struct CmpParams {
    lambda: f64,
    nu: f64,
}

#[derive(Serialize, Deserialize)]
struct RawCmpParams {
    lambda: f64,
    nu: f64,
}

impl TryFrom<RawCmpParams> for CmpParams {
    type Error = CmpError;

    fn try_from(raw: RawCmpParams) -> Result<Self, Self::Error> {
        CmpParams::new(raw.lambda, raw.nu)
    }
}

impl From<CmpParams> for RawCmpParams {
    fn from(p: CmpParams) -> Self {
        RawCmpParams {
            lambda: p.lambda,
            nu: p.nu,
        }
    }
}

impl CmpParams {
    pub fn new(lambda: f64, nu: f64) -> Result<Self, CmpError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(CmpError::InvalidLambda(lambda));
        }
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(CmpError::InvalidNu(nu));
        }
        if nu == 0.0 && lambda >= 1.0 {
            return Err(CmpError::Undefined(lambda));
        }
        Ok(CmpParams { lambda, nu })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

/// `ln(x!)`. Exact summation for small arguments, Stirling series beyond.
pub fn ln_factorial(x: u64) -> f64 {
    if x < 2 {
        return 0.0;
    }
    if x <= 256 {
        return (2..=x).map(|k| (k as f64).ln()).sum();
    }
    let n = x as f64;
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// `ln(e^a + e^b)`.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Z(λ, ν)`.
///
/// Terms are accumulated as `ln t_k = ln t_{k-1} + ln λ − ν ln k` until a term
/// drops below [`Z_RELATIVE_TOLERANCE`] times the running sum, with at most
/// [`Z_MAX_TERMS`] terms.
pub fn log_normalizing_constant(p: &CmpParams) -> Result<f64, CmpError> {
    let ln_lambda = p.lambda.ln();
    let ln_tol = Z_RELATIVE_TOLERANCE.ln();
    let mut ln_term = 0.0;
    let mut ln_sum = 0.0;
    for k in 1..Z_MAX_TERMS {
        ln_term += ln_lambda - p.nu * (k as f64).ln();
        ln_sum = log_add(ln_sum, ln_term);
        if ln_term < ln_tol + ln_sum {
            return Ok(ln_sum);
        }
    }
    Err(CmpError::NonConvergence {
        lambda: p.lambda,
        nu: p.nu,
        terms: Z_MAX_TERMS,
    })
}

/// `Z(λ, ν)`. Overflows to infinity for extreme parameters; prefer
/// [`log_normalizing_constant`] there.
pub fn normalizing_constant(p: &CmpParams) -> Result<f64, CmpError> {
    log_normalizing_constant(p).map(f64::exp)
}

pub fn pmf(p: &CmpParams, x: u64) -> Result<f64, CmpError> {
    Cmp::new(*p).map(|d| d.pmf(x))
}

pub fn cdf(p: &CmpParams, x: i64) -> Result<f64, CmpError> {
    Cmp::new(*p).map(|d| d.cdf(x))
}

pub fn mean(p: &CmpParams, d: u32) -> Result<f64, CmpError> {
    Cmp::new(*p).map(|dist| dist.mean(d))
}

/// A CMP distribution with its normalizing constant resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cmp {
    params: CmpParams,
    ln_z: f64,
}

impl Cmp {
    pub fn new(params: CmpParams) -> Result<Self, CmpError> {
        let ln_z = log_normalizing_constant(&params)?;
        Ok(Cmp { params, ln_z })
    }

    pub fn params(&self) -> &CmpParams {
        &self.params
    }

    pub fn ln_normalizing_constant(&self) -> f64 {
        self.ln_z
    }

    pub fn ln_pmf(&self, x: u64) -> f64 {
        x as f64 * self.params.lambda.ln() - self.params.nu * ln_factorial(x) - self.ln_z
    }

    pub fn pmf(&self, x: u64) -> f64 {
        self.ln_pmf(x).exp()
    }

    /// `Pr(X ≤ x)`; exactly 0 for negative `x`.
    pub fn cdf(&self, x: i64) -> f64 {
        if x < 0 {
            return 0.0;
        }
        let ln_lambda = self.params.lambda.ln();
        let mut ln_term = -self.ln_z;
        let mut acc = ln_term.exp();
        for k in 1..=x as u64 {
            ln_term += ln_lambda - self.params.nu * (k as f64).ln();
            acc += ln_term.exp();
        }
        acc.min(1.0)
    }

    /// `Pr(X ≤ k)` for `k = 0..=upper`.
    pub fn cdf_table(&self, upper: u64) -> Vec<f64> {
        let ln_lambda = self.params.lambda.ln();
        let mut ln_term = -self.ln_z;
        let mut acc = ln_term.exp();
        let mut out = Vec::with_capacity(upper as usize + 1);
        out.push(acc.min(1.0));
        for k in 1..=upper {
            ln_term += ln_lambda - self.params.nu * (k as f64).ln();
            acc += ln_term.exp();
            out.push(acc.min(1.0));
        }
        out
    }

    /// `Pr(X > x)`, summed over the upper tail where `1 − cdf` would cancel.
    pub fn sf(&self, x: i64) -> f64 {
        if x < 0 {
            return 1.0;
        }
        let f = self.cdf(x);
        if f <= 0.5 {
            1.0 - f
        } else {
            self.tail_beyond(x as u64)
        }
    }

    /// `Pr(X > k)` for `k = 0..=upper`, consistent with [`Cmp::sf`].
    pub fn sf_table(&self, upper: u64) -> Vec<f64> {
        let cdf = self.cdf_table(upper);
        let mut out: Vec<f64> = cdf.iter().map(|f| 1.0 - f).collect();
        let mut tail = self.tail_beyond(upper);
        for k in (0..=upper as usize).rev() {
            if cdf[k] <= 0.5 {
                break;
            }
            out[k] = tail;
            tail += self.pmf(k as u64);
        }
        out
    }

    /// `Σ_{j > x} Pr(X = j)` by direct summation past the mode.
    fn tail_beyond(&self, x: u64) -> f64 {
        let ln_lambda = self.params.lambda.ln();
        let mut ln_term = self.ln_pmf(x + 1);
        let mut acc = 0.0;
        for j in x + 1..x + 1 + Z_MAX_TERMS as u64 {
            let term = ln_term.exp();
            acc += term;
            let next_step = ln_lambda - self.params.nu * ((j + 1) as f64).ln();
            if next_step < 0.0 && term <= 1e-17 * acc {
                break;
            }
            ln_term += next_step;
        }
        acc.min(1.0)
    }

    /// Truncated first moment `Σ_{k=0}^{d} k Pr(X = k)`. The truncation error is
    /// not corrected.
    pub fn mean(&self, d: u32) -> f64 {
        let ln_lambda = self.params.lambda.ln();
        let mut ln_term = -self.ln_z;
        let mut acc = 0.0;
        for k in 1..=d {
            ln_term += ln_lambda - self.params.nu * (k as f64).ln();
            acc += k as f64 * ln_term.exp();
        }
        acc
    }

    /// Smallest `k` with `Pr(X > k) < tail`, searched up to `max_k`.
    pub fn upper_quantile(&self, tail: f64, max_k: u64) -> Option<u64> {
        let ln_lambda = self.params.lambda.ln();
        let mut ln_term = -self.ln_z;
        let mut acc = ln_term.exp();
        if 1.0 - acc < tail {
            return Some(0);
        }
        for k in 1..=max_k {
            ln_term += ln_lambda - self.params.nu * (k as f64).ln();
            acc += ln_term.exp();
            if 1.0 - acc < tail {
                return Some(k);
            }
        }
        None
    }
}
