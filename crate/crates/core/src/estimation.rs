//! Direct numerical maximum likelihood with random multi-start, Hessian-based
//! covariance of the working parameters, and Monte Carlo confidence bands for
//! transition probabilities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::data::Dataset;
use crate::decode::covariate_vector;
use crate::error::{invalid, Error, Result};
use crate::likelihood::{forward_with, information_criteria, Emissions};
use crate::model::{ModelParams, ModelSpec, TransitionCoefficients};
use crate::optim::{minimize, Minimum, OptimizerSettings};

/// Uniform ranges from which random starting values are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StartRanges {
    pub lambda_shots: (f64, f64),
    pub lambda_touches: (f64, f64),
    pub nu: (f64, f64),
    pub theta_frank: (f64, f64),
    pub theta_clayton: (f64, f64),
    pub theta_amh: (f64, f64),
    pub intercept: (f64, f64),
    pub slope: (f64, f64),
    pub delta_logit: (f64, f64),
}

impl Default for StartRanges {
    fn default() -> Self {
        StartRanges {
            lambda_shots: (0.05, 0.5),
            lambda_touches: (0.5, 5.0),
            nu: (0.05, 1.5),
            theta_frank: (-3.0, 3.0),
            theta_clayton: (-0.5, 3.0),
            theta_amh: (-0.9, 0.9),
            intercept: (-3.0, -1.0),
            slope: (-0.5, 0.5),
            delta_logit: (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiStartSettings {
    pub n_starts: usize,
    pub seed: u64,
    pub ranges: StartRanges,
    pub optimizer: OptimizerSettings,
}

impl Default for MultiStartSettings {
    fn default() -> Self {
        MultiStartSettings {
            n_starts: 50,
            seed: 0,
            ranges: StartRanges::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

/// Diagnostics of the Hessian inversion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CovarianceFlags {
    /// The Hessian had a non-positive eigenvalue.
    pub indefinite: bool,
    /// Eigenvalues were truncated (condition number above 1e12 or indefinite).
    pub pseudo_inverse: bool,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub flags: CovarianceFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub working: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub working_cov: DMatrix<f64>,
    pub cov_flags: CovarianceFlags,
    pub n_starts: usize,
    pub best_start_index: usize,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Log-likelihood reached from each start (`None` if the start failed).
    pub start_logliks: Vec<Option<f64>>,
}

/// Negative log-likelihood as a function of the working vector. Returns
/// `+∞` where parameters are invalid or the likelihood cannot be evaluated.
pub struct Objective<'a> {
    spec: &'a ModelSpec,
    data: &'a Dataset,
    max: [u64; 2],
}

impl<'a> Objective<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a Dataset) -> Result<Self> {
        if data.covariate_names().len() != spec.n_covariates() {
            return Err(invalid(format!(
                "model has {} covariates, data has {}",
                spec.n_covariates(),
                data.covariate_names().len()
            )));
        }
        Ok(Objective {
            spec,
            data,
            max: data.max_counts(),
        })
    }

    pub fn try_eval(&self, working: &[f64]) -> Result<f64> {
        let params = ModelParams::unpack(self.spec, working)?;
        let emissions = Emissions::new(&params, self.max)?;
        let mut ll = 0.0;
        for m in self.data.matches() {
            ll += forward_with(&params, &emissions, m)?;
        }
        Ok(-ll)
    }

    pub fn eval(&self, working: &[f64]) -> f64 {
        match self.try_eval(working) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }
}

/// Draws `n` working-space starting vectors, deterministic in `seed`.
pub fn draw_starts(spec: &ModelSpec, ranges: &StartRanges, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_start(spec, ranges, &mut rng)).collect()
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw_start<R: Rng>(spec: &ModelSpec, r: &StartRanges, rng: &mut R) -> Vec<f64> {
    let n = spec.n_states();
    let mut w = Vec::with_capacity(spec.num_params());
    for _ in 0..n {
        w.push(uniform(rng, r.lambda_shots).ln());
        w.push(uniform(rng, r.nu).ln());
        w.push(uniform(rng, r.lambda_touches).ln());
        w.push(uniform(rng, r.nu).ln());
    }
    for _ in 0..n {
        match spec.family() {
            CopulaFamily::Independence => {}
            CopulaFamily::Frank => w.push(uniform(rng, r.theta_frank)),
            CopulaFamily::Clayton => w.push(uniform(rng, r.theta_clayton).ln_1p()),
            CopulaFamily::Amh => w.push(uniform(rng, r.theta_amh).atanh()),
        }
    }
    for _ in 1..n {
        w.push(uniform(rng, r.delta_logit));
    }
    for _ in 0..n * (n - 1) {
        w.push(uniform(rng, r.intercept));
        for _ in 0..spec.n_covariates() {
            w.push(uniform(rng, r.slope));
        }
    }
    w
}

fn optimize(objective: &Objective<'_>, start: &[f64], settings: &OptimizerSettings) -> Result<Minimum> {
    if start.len() != objective.spec.num_params() {
        return Err(invalid(format!(
            "start has length {}, model needs {}",
            start.len(),
            objective.spec.num_params()
        )));
    }
    if let Err(e) = objective.try_eval(start).and_then(|v| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("objective is {v}")))
        }
    }) {
        return Err(Error::Fit(format!("start rejected: {e}")));
    }
    let f = |w: &[f64]| objective.eval(w);
    let m = minimize(&f, start, settings);
    if !m.value.is_finite() {
        return Err(Error::Fit("optimizer ended at a non-finite objective".into()));
    }
    Ok(m)
}

fn finish(
    spec: &ModelSpec,
    data: &Dataset,
    objective: &Objective<'_>,
    m: Minimum,
    n_starts: usize,
    best_start_index: usize,
    start_logliks: Vec<Option<f64>>,
) -> Result<FitResult> {
    let params = ModelParams::unpack(spec, &m.x)?;
    let loglik = -m.value;
    let (aic, bic) = information_criteria(loglik, spec, data.n_obs());
    let cov = hessian_covariance(&|w: &[f64]| objective.eval(w), &m.x);
    Ok(FitResult {
        spec: spec.clone(),
        params,
        working: m.x,
        loglik,
        aic,
        bic,
        n_obs: data.n_obs(),
        working_cov: cov.matrix,
        cov_flags: cov.flags,
        n_starts,
        best_start_index,
        converged: m.converged,
        iterations: m.iterations,
        gradient_norm: m.gradient_norm,
        start_logliks,
    })
}

/// Single-start fit from a given working vector.
pub fn fit(
    spec: &ModelSpec,
    data: &Dataset,
    start: &[f64],
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    let objective = Objective::new(spec, data)?;
    let m = optimize(&objective, start, settings)?;
    let ll = -m.value;
    finish(spec, data, &objective, m, 1, 0, vec![Some(ll)])
}

/// Fits from `n_starts` random starts (in parallel) and keeps the best
/// log-likelihood; ties go to the lowest start index.
pub fn multi_start_fit(spec: &ModelSpec, data: &Dataset, settings: &MultiStartSettings) -> Result<FitResult> {
    if settings.n_starts == 0 {
        return Err(invalid("need at least one start"));
    }
    let objective = Objective::new(spec, data)?;
    let starts = draw_starts(spec, &settings.ranges, settings.n_starts, settings.seed);
    let outcomes: Vec<Result<Minimum>> = starts
        .par_iter()
        .map(|s| optimize(&objective, s, &settings.optimizer))
        .collect();
    let start_logliks: Vec<Option<f64>> = outcomes
        .iter()
        .map(|o| o.as_ref().ok().map(|m| -m.value))
        .collect();
    let mut best: Option<usize> = None;
    for (i, ll) in start_logliks.iter().enumerate() {
        if let Some(ll) = ll {
            if best.is_none_or(|b| *ll > start_logliks[b].unwrap()) {
                best = Some(i);
            }
        }
    }
    let Some(best) = best else {
        let reasons: Vec<String> = outcomes
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.as_ref().err().map(|e| format!("start {i}: {e}")))
            .collect();
        return Err(Error::Fit(format!("all {} starts failed: {}", settings.n_starts, reasons.join("; "))));
    };
    let m = outcomes.into_iter().nth(best).unwrap()?;
    finish(spec, data, &objective, m, settings.n_starts, best, start_logliks)
}

/// Central-difference Hessian with steps `1e-4 · max(|w_i|, 1)`.
pub fn numerical_hessian<F: Fn(&[f64]) -> f64>(f: &F, w: &[f64]) -> DMatrix<f64> {
    let n = w.len();
    let h: Vec<f64> = w.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let f0 = f(w);
    let mut x = w.to_vec();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        x[i] = w[i] + h[i];
        let up = f(&x);
        x[i] = w[i] - h[i];
        let down = f(&x);
        x[i] = w[i];
        out[(i, i)] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                x[i] = w[i] + si * h[i];
                x[j] = w[j] + sj * h[j];
                let v = f(&x);
                x[i] = w[i];
                x[j] = w[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Inverts a symmetric Hessian through its eigendecomposition. Eigenvalues
/// that are non-positive, or smaller than 1e-12 of the largest, are dropped
/// (pseudo-inverse), so the result is always symmetric positive semidefinite.
pub fn covariance_from_hessian(hessian: &DMatrix<f64>) -> CovarianceEstimate {
    let n = hessian.nrows();
    if n == 0 {
        return CovarianceEstimate {
            matrix: DMatrix::zeros(0, 0),
            flags: CovarianceFlags::default(),
        };
    }
    if hessian.iter().any(|v| !v.is_finite()) {
        return CovarianceEstimate {
            matrix: DMatrix::zeros(n, n),
            flags: CovarianceFlags {
                indefinite: true,
                pseudo_inverse: true,
                condition_number: f64::INFINITY,
            },
        };
    }
    let sym = (hessian + hessian.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_ev = eig.eigenvalues.min();
    let indefinite = min_ev <= 0.0;
    let condition_number = if min_ev > 0.0 { eig.eigenvalues.max() / min_ev } else { f64::INFINITY };
    let pseudo_inverse = indefinite || condition_number > 1e12;
    let cutoff = 1e-12 * max_abs;
    let inv = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 }),
    );
    let v = &eig.eigenvectors;
    let mut matrix = v * DMatrix::from_diagonal(&inv) * v.transpose();
    matrix = (&matrix + matrix.transpose()) * 0.5;
    CovarianceEstimate {
        matrix,
        flags: CovarianceFlags {
            indefinite,
            pseudo_inverse,
            condition_number,
        },
    }
}

pub fn hessian_covariance<F: Fn(&[f64]) -> f64>(f: &F, w: &[f64]) -> CovarianceEstimate {
    covariance_from_hessian(&numerical_hessian(f, w))
}

/// Working-parameter covariance at a fitted optimum.
pub fn covariance_estimate(fit: &FitResult, data: &Dataset) -> Result<CovarianceEstimate> {
    covariance_estimate_at(&fit.spec, data, &fit.working)
}

/// Relabels a fitted model so states are ordered by ascending mean ball
/// touches, recomputing the working covariance in the new labeling.
pub fn relabel_by_touches(fit: &FitResult, data: &Dataset) -> Result<FitResult> {
    let order = fit.params.touch_order()?;
    if order.iter().enumerate().all(|(k, &o)| k == o) {
        return Ok(fit.clone());
    }
    let params = fit.params.permuted(&order)?;
    let working = params.pack();
    let cov = covariance_estimate_at(&fit.spec, data, &working)?;
    Ok(FitResult {
        params,
        working,
        working_cov: cov.matrix,
        cov_flags: cov.flags,
        ..fit.clone()
    })
}

fn covariance_estimate_at(spec: &ModelSpec, data: &Dataset, working: &[f64]) -> Result<CovarianceEstimate> {
    let objective = Objective::new(spec, data)?;
    Ok(hessian_covariance(&|w: &[f64]| objective.eval(w), working))
}

/// Standard errors of the working parameters (square roots of the diagonal).
pub fn working_standard_errors(fit: &FitResult) -> Vec<f64> {
    fit.working_cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Pointwise estimate and 95% percentile band of one `γ_ij` at one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub value: f64,
    pub from: usize,
    pub to: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolation sample quantile (type 7) of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Monte Carlo bands for the transition probabilities as one covariate
/// sweeps over `grid` (raw scale) with the rest held at `fixed` (raw scale).
///
/// Working vectors are drawn from `N(ŵ, Σ)` with `Σ = fit.working_cov`.
pub fn transition_curve_ci(
    fit: &FitResult,
    sweep: &str,
    grid: &[f64],
    fixed: &[(String, f64)],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let spec = &fit.spec;
    if spec.covariate_index(sweep).is_none() {
        return Err(invalid(format!("model has no covariate '{sweep}'")));
    }
    if n_draws == 0 {
        return Err(invalid("need at least one Monte Carlo draw"));
    }
    let n = spec.n_states();
    let p = spec.n_covariates();
    let dim = fit.working.len();
    let offset = dim - n * (n - 1) * (p + 1);
    let factor = mvn_factor(&fit.working_cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<TransitionCoefficients> = (0..n_draws)
        .map(|_| {
            let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let w = DVector::from_row_slice(&fit.working) + &factor * z;
            TransitionCoefficients::from_values(n, p, w.as_slice()[offset..].to_vec())
        })
        .collect::<Result<_>>()?;
    let xs: Vec<Vec<f64>> = grid
        .iter()
        .map(|&v| covariate_vector(spec, fixed, Some((sweep, v))))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(grid.len() * n * n);
    let mut buf = vec![0.0; n * n];
    for (&value, x) in grid.iter().zip(&xs) {
        fit.params.transitions().matrix_into(x, &mut buf);
        let point = buf.clone();
        let mut samples = vec![Vec::with_capacity(n_draws); n * n];
        for d in &draws {
            d.matrix_into(x, &mut buf);
            for (k, v) in buf.iter().enumerate() {
                samples[k].push(*v);
            }
        }
        for (k, mut s) in samples.into_iter().enumerate() {
            s.sort_by(f64::total_cmp);
            out.push(CurvePoint {
                value,
                from: k / n,
                to: k % n,
                estimate: point[k],
                lower: quantile_sorted(&s, 0.025).clamp(0.0, 1.0),
                upper: quantile_sorted(&s, 0.975).clamp(0.0, 1.0),
            });
        }
    }
    Ok(out)
}

/// `L` with `L Lᵀ = Σ` for a symmetric positive semidefinite `Σ`.
fn mvn_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("covariance matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale.max(1e-300)) {
        return Err(Error::Numerical(
            "covariance is not positive semidefinite; regularize it with the eigenvalue pseudo-inverse".into(),
        ));
    }
    let sqrt = DVector::from_iterator(n, eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// One row of a model-selection table.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub n_states: usize,
    pub family: CopulaFamily,
    pub num_params: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
}

/// Fits every (states, family) combination without covariates. Failed
/// combinations are reported through their error instead of aborting the grid.
pub fn select_models(
    data: &Dataset,
    states: &[usize],
    families: &[CopulaFamily],
    settings: &MultiStartSettings,
) -> Vec<(usize, CopulaFamily, Result<SelectionRow>)> {
    let mut out = vec![];
    for &n in states {
        for &family in families {
            let row = ModelSpec::new(
                n,
                family,
                data.covariate_names().to_vec(),
                data.standardization().to_vec(),
            )
            .and_then(|spec| multi_start_fit(&spec, data, settings))
            .map(|fit| SelectionRow {
                n_states: n,
                family,
                num_params: fit.spec.num_params(),
                loglik: fit.loglik,
                aic: fit.aic,
                bic: fit.bic,
                converged: fit.converged,
            });
            out.push((n, family, row));
        }
    }
    out
}
