//! Archimedean copulas (Frank, Clayton, Ali–Mikhail–Haq) and the discrete
//! bivariate pmf obtained by joining two CMP margins through a copula.
//!
//! For discrete margins the joint pmf is a rectangle mass of the copula:
//!
//! ```text
//! f(y1, y2) = C(F1(y1),   F2(y2))   − C(F1(y1−1), F2(y2))
//!           − C(F1(y1),   F2(y2−1)) + C(F1(y1−1), F2(y2−1))
//! ```
//!
//! with `F(−1) = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmp::Cmp;

/// Below this |θ| Frank and Clayton are evaluated as the product copula.
pub const INDEPENDENCE_THRESHOLD: f64 = 1e-8;
/// Largest negative rectangle mass attributed to roundoff.
pub const NEGATIVE_MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Independence,
    Frank,
    Clayton,
    Amh,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 4] = [
        CopulaFamily::Independence,
        CopulaFamily::Frank,
        CopulaFamily::Clayton,
        CopulaFamily::Amh,
    ];

    pub fn has_parameter(self) -> bool {
        self != CopulaFamily::Independence
    }

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Independence => "independence",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Amh => "amh",
        }
    }

    pub fn theta_in_domain(self, theta: f64) -> bool {
        match self {
            CopulaFamily::Independence => true,
            CopulaFamily::Frank => theta.is_finite(),
            CopulaFamily::Clayton => theta.is_finite() && theta >= -1.0,
            CopulaFamily::Amh => (-1.0..1.0).contains(&theta),
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = CopulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "none" => Ok(CopulaFamily::Independence),
            "frank" => Ok(CopulaFamily::Frank),
            "clayton" => Ok(CopulaFamily::Clayton),
            "amh" => Ok(CopulaFamily::Amh),
            _ => Err(CopulaError::UnknownFamily(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CopulaError {
    #[error("unknown copula family '{0}' (expected independence, frank, clayton or amh)")]
    UnknownFamily(String),
    #[error("θ = {theta} is outside the domain of the {family} copula")]
    Domain { family: CopulaFamily, theta: f64 },
    #[error("negative joint mass {mass:e} for {family} copula with θ = {theta} at (y1, y2) = ({y1}, {y2})")]
    NegativeMass {
        family: CopulaFamily,
        theta: f64,
        y1: u64,
        y2: u64,
        mass: f64,
    },
}

/// A copula family together with its dependence parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Copula {
    family: CopulaFamily,
    theta: f64,
}

impl Copula {
    pub fn new(family: CopulaFamily, theta: f64) -> Result<Self, CopulaError> {
        if !family.theta_in_domain(theta) {
            return Err(CopulaError::Domain { family, theta });
        }
        let theta = if family.has_parameter() { theta } else { 0.0 };
        Ok(Copula { family, theta })
    }

    pub fn independence() -> Self {
        Copula {
            family: CopulaFamily::Independence,
            theta: 0.0,
        }
    }

    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `C(u1, u2)`. Arguments are clamped to [0, 1].
    pub fn cdf(&self, u1: f64, u2: f64) -> f64 {
        let u1 = u1.clamp(0.0, 1.0);
        let u2 = u2.clamp(0.0, 1.0);
        if u1 == 0.0 || u2 == 0.0 {
            return 0.0;
        }
        if u1 == 1.0 {
            return u2;
        }
        if u2 == 1.0 {
            return u1;
        }
        let theta = self.theta;
        let c = match self.family {
            CopulaFamily::Independence => u1 * u2,
            CopulaFamily::Frank if theta.abs() < INDEPENDENCE_THRESHOLD => u1 * u2,
            CopulaFamily::Frank => frank(theta, u1, u2),
            CopulaFamily::Clayton if theta.abs() < INDEPENDENCE_THRESHOLD => u1 * u2,
            CopulaFamily::Clayton => clayton(theta, u1, u2),
            CopulaFamily::Amh => u1 * u2 / (1.0 - theta * (1.0 - u1) * (1.0 - u2)),
        };
        c.clamp((u1 + u2 - 1.0).max(0.0), u1.min(u2))
    }

    /// Copula mass of the rectangle `[u1_lo, u1_hi] × [u2_lo, u2_hi]`.
    pub fn rectangle_mass(&self, u1_lo: f64, u1_hi: f64, u2_lo: f64, u2_hi: f64) -> f64 {
        self.cdf(u1_hi, u2_hi) - self.cdf(u1_lo, u2_hi) - self.cdf(u1_hi, u2_lo)
            + self.cdf(u1_lo, u2_lo)
    }

    /// Survival copula `Ĉ(s1, s2) = Pr(U1 > 1 − s1, U2 > 1 − s2)`, accurate
    /// for small `s`.
    pub fn survival(&self, s1: f64, s2: f64) -> f64 {
        let s1 = s1.clamp(0.0, 1.0);
        let s2 = s2.clamp(0.0, 1.0);
        if s1 == 0.0 || s2 == 0.0 {
            return 0.0;
        }
        if s1 == 1.0 {
            return s2;
        }
        if s2 == 1.0 {
            return s1;
        }
        let theta = self.theta;
        let c = match self.family {
            CopulaFamily::Independence => s1 * s2,
            _ if theta.abs() < INDEPENDENCE_THRESHOLD && self.family != CopulaFamily::Amh => s1 * s2,
            // Frank is radially symmetric.
            CopulaFamily::Frank => frank(theta, s1, s2),
            CopulaFamily::Clayton => clayton_survival(theta, s1, s2),
            CopulaFamily::Amh => {
                s1 * s2 * (1.0 + theta * (1.0 - s1) * (1.0 - s2) / (1.0 - theta * s1 * s2))
            }
        };
        c.clamp((s1 + s2 - 1.0).max(0.0), s1.min(s2))
    }

    /// `Pr(U1 ≤ u, U2 > 1 − s)`, accurate for small `s`. By exchangeability it
    /// also equals `Pr(U1 > 1 − s, U2 ≤ u)`.
    pub fn lower_upper(&self, u: f64, s: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let s = s.clamp(0.0, 1.0);
        if u == 0.0 || s == 0.0 {
            return 0.0;
        }
        if u == 1.0 {
            return s;
        }
        if s == 1.0 {
            return u;
        }
        let theta = self.theta;
        let c = match self.family {
            CopulaFamily::Independence => u * s,
            _ if theta.abs() < INDEPENDENCE_THRESHOLD && self.family != CopulaFamily::Amh => u * s,
            // (U1, 1 − U2) is Frank with −θ.
            CopulaFamily::Frank => frank(-theta, u, s),
            CopulaFamily::Clayton => clayton_lower_upper(theta, u, s),
            CopulaFamily::Amh => {
                let a = theta * (1.0 - u);
                u * s * (1.0 - a) / (1.0 - a * s)
            }
        };
        c.clamp((u + s - 1.0).max(0.0), u.min(s))
    }

    /// Mass of the cell `{Y1 = y1, Y2 = y2}` from the bracketing marginal
    /// cdf and survival values. Each margin is evaluated in upper-tail
    /// coordinates when its lower cdf value exceeds 1/2, so masses far in
    /// the upper tails do not cancel.
    pub fn cell_mass(&self, c1: &CellBounds, c2: &CellBounds) -> f64 {
        match (c1.upper(), c2.upper()) {
            (false, false) => self.rectangle_mass(c1.cdf_lo, c1.cdf_hi, c2.cdf_lo, c2.cdf_hi),
            (true, true) => {
                self.survival(c1.sf_lo, c2.sf_lo) - self.survival(c1.sf_hi, c2.sf_lo)
                    - self.survival(c1.sf_lo, c2.sf_hi)
                    + self.survival(c1.sf_hi, c2.sf_hi)
            }
            (false, true) => mixed(self, c1, c2),
            (true, false) => mixed(self, c2, c1),
        }
    }

    /// Joint pmf of `(y1, y2)` from the bracketing marginal values.
    ///
    /// Returns the mass clamped to [0, 1], or an error if it is more negative
    /// than [`NEGATIVE_MASS_TOLERANCE`].
    pub fn joint_mass(&self, c1: &CellBounds, c2: &CellBounds, y: (u64, u64)) -> Result<f64, CopulaError> {
        let mass = self.cell_mass(c1, c2);
        if mass.is_nan() || mass < -NEGATIVE_MASS_TOLERANCE {
            return Err(CopulaError::NegativeMass {
                family: self.family,
                theta: self.theta,
                y1: y.0,
                y2: y.1,
                mass,
            });
        }
        Ok(mass.clamp(0.0, 1.0))
    }
}

/// `Pr(Y1 = y1, Y2 = y2)` with `Y1` in lower and `Y2` in upper coordinates:
/// `Pr(Y1 ≤ a, Y2 ≥ b) = D(F1(a), S2(b − 1))`.
fn mixed(c: &Copula, lower: &CellBounds, upper: &CellBounds) -> f64 {
    c.lower_upper(lower.cdf_hi, upper.sf_lo) - c.lower_upper(lower.cdf_lo, upper.sf_lo)
        - c.lower_upper(lower.cdf_hi, upper.sf_hi)
        + c.lower_upper(lower.cdf_lo, upper.sf_hi)
}

/// Marginal values bracketing one count `y`: `F(y − 1)`, `F(y)` and the
/// survival values `S(y − 1) = 1 − F(y − 1)`, `S(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub cdf_lo: f64,
    pub cdf_hi: f64,
    pub sf_lo: f64,
    pub sf_hi: f64,
}

impl CellBounds {
    pub fn new(m: &Cmp, y: u64) -> Self {
        CellBounds {
            cdf_lo: m.cdf(y as i64 - 1),
            cdf_hi: m.cdf(y as i64),
            sf_lo: m.sf(y as i64 - 1),
            sf_hi: m.sf(y as i64),
        }
    }

    /// Bounds for `y = 0..=max`.
    pub fn table(m: &Cmp, max: u64) -> Vec<Self> {
        let f = m.cdf_table(max);
        let s = m.sf_table(max);
        (0..=max as usize)
            .map(|y| CellBounds {
                cdf_lo: if y == 0 { 0.0 } else { f[y - 1] },
                cdf_hi: f[y],
                sf_lo: if y == 0 { 1.0 } else { s[y - 1] },
                sf_hi: s[y],
            })
            .collect()
    }

    fn upper(&self) -> bool {
        self.cdf_lo > 0.5
    }
}

/// `−(1/θ) ln(1 + (e^{−θ u1} − 1)(e^{−θ u2} − 1) / (e^{−θ} − 1))`, written with
/// `expm1`/`ln_1p` so small |θ| does not cancel. For large positive θ the
/// argument of the logarithm can approach 0; there it is rebuilt from two
/// positive terms, `(e^{−θ u1}(1 − e^{−θ u2}) + e^{−θ u2}(1 − e^{−θ(1 − u2)})) / (1 − e^{−θ})`.
fn frank(theta: f64, u1: f64, u2: f64) -> f64 {
    let (u1, u2) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
    let a = (-theta * u1).exp_m1();
    let b = (-theta * u2).exp_m1();
    let c = (-theta).exp_m1();
    let x = a * b / c;
    if theta < 0.0 || x > -0.5 {
        return -x.ln_1p() / theta;
    }
    let t1 = -theta * u1 + (-b).ln();
    let t2 = -theta * u2 + (-(-theta * (1.0 - u2)).exp_m1()).ln();
    let hi = t1.max(t2);
    let ln_num = hi + ((t1 - hi).exp() + (t2 - hi).exp()).ln();
    -(ln_num - (-c).ln()) / theta
}

/// `(max{u1^{−θ} + u2^{−θ} − 1, 0})^{−1/θ}`.
fn clayton(theta: f64, u1: f64, u2: f64) -> f64 {
    // u^{−θ} = e^{L}, L = −θ ln u
    let l1 = -theta * u1.ln();
    let l2 = -theta * u2.ln();
    let hi = l1.max(l2);
    let ln_s = if hi > 30.0 {
        // u^{−θ} may overflow; factor out the larger exponential.
        let inner = (l1 - hi).exp() + (l2 - hi).exp() - (-hi).exp();
        hi + inner.ln()
    } else {
        let s_minus_one = l1.exp_m1() + l2.exp_m1();
        if s_minus_one <= -1.0 {
            return 0.0;
        }
        s_minus_one.ln_1p()
    };
    (-ln_s / theta).exp()
}

/// `expm1(−ln1p(z)/θ) = (1 + z)^{−1/θ} − 1`.
fn clayton_e(theta: f64, z: f64) -> f64 {
    (-z.ln_1p() / theta).exp_m1()
}

/// `(1 − s)^{−θ} − 1`.
fn clayton_h(theta: f64, s: f64) -> f64 {
    (-theta * (-s).ln_1p()).exp_m1()
}

/// Clayton survival copula. With `h_i = (1 − s_i)^{−θ} − 1` and
/// `φ(x) = (1 + x)^{−1/θ}`, `Ĉ = φ(h1 + h2) − φ(h1) − φ(h2) + 1`, regrouped
/// into two products so that no step cancels.
fn clayton_survival(theta: f64, s1: f64, s2: f64) -> f64 {
    let h1 = clayton_h(theta, s1);
    let h2 = clayton_h(theta, s2);
    if 1.0 + h1 + h2 <= 0.0 {
        return (s1 + s2 - 1.0).max(0.0);
    }
    let phi2 = (1.0 + h2).powf(-1.0 / theta);
    // ln(1 + cross) with cross = −h1 h2 / ((1 + h1)(1 + h2))
    let cross = -h1 * h2 / ((1.0 + h1) * (1.0 + h2));
    let ln_1p_cross = if cross.abs() < 0.5 {
        cross.ln_1p()
    } else {
        (1.0 + h1 + h2).ln() - h1.ln_1p() - h2.ln_1p()
    };
    phi2 * (-ln_1p_cross / theta).exp_m1() + clayton_e(theta, h1) * clayton_e(theta, h2 / (1.0 + h1))
}

/// `u − C(u, 1 − s) = −u · expm1(−ln1p(u^θ h(s)) / θ)`.
fn clayton_lower_upper(theta: f64, u: f64, s: f64) -> f64 {
    let z = (theta * u.ln()).exp() * clayton_h(theta, s);
    if z <= -1.0 || z.is_nan() {
        return u;
    }
    -u * clayton_e(theta, z)
}

/// Joint pmf of two CMP margins joined by `copula`.
pub fn bivariate_pmf(
    copula: &Copula,
    m1: &Cmp,
    m2: &Cmp,
    y1: u64,
    y2: u64,
) -> Result<f64, CopulaError> {
    if copula.family == CopulaFamily::Independence {
        return Ok(m1.pmf(y1) * m2.pmf(y2));
    }
    copula.joint_mass(&CellBounds::new(m1, y1), &CellBounds::new(m2, y2), (y1, y2))
}

/// Joint pmf table `f[y1][y2]` for `y1 ≤ max1`, `y2 ≤ max2`.
pub fn bivariate_pmf_table(
    copula: &Copula,
    m1: &Cmp,
    m2: &Cmp,
    max1: u64,
    max2: u64,
) -> Result<Vec<Vec<f64>>, CopulaError> {
    if copula.family == CopulaFamily::Independence {
        let p1: Vec<f64> = (0..=max1).map(|y| m1.pmf(y)).collect();
        let p2: Vec<f64> = (0..=max2).map(|y| m2.pmf(y)).collect();
        return Ok(p1.iter().map(|a| p2.iter().map(|b| a * b).collect()).collect());
    }
    let b1 = CellBounds::table(m1, max1);
    let b2 = CellBounds::table(m2, max2);
    b1.iter()
        .enumerate()
        .map(|(y1, c1)| {
            b2.iter()
                .enumerate()
                .map(|(y2, c2)| copula.joint_mass(c1, c2, (y1 as u64, y2 as u64)))
                .collect()
        })
        .collect()
}
