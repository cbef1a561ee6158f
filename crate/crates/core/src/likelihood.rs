//! Scaled forward recursion for the HMM likelihood.
//!
//! For one match the likelihood is `δ P(y1) Γ2 P(y2) … ΓT P(yT) 1` where
//! `P(y)` is diagonal with the state-dependent joint pmfs and `Γt` is the
//! transition matrix at the covariates of minute `t`. The forward vector is
//! renormalized at every step and the log scale factors accumulated. Matches
//! are independent, so the dataset log-likelihood is a sum over matches.

use crate::data::{Dataset, MatchSeries};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec};

/// Emission probabilities for every state over a bounded count grid.
pub(crate) struct Emissions {
    tables: Vec<Vec<Vec<f64>>>,
}

impl Emissions {
    pub(crate) fn new(params: &ModelParams, max: [u64; 2]) -> Result<Self> {
        Ok(Emissions {
            tables: params.emission_tables(max[0], max[1])?,
        })
    }

    #[inline]
    pub(crate) fn get(&self, state: usize, y: [u64; 2]) -> f64 {
        self.tables[state][y[0] as usize][y[1] as usize]
    }
}

/// Yields the transition matrix (row-major) governing the move into minute `t`.
pub(crate) struct TransitionSource<'a> {
    params: &'a ModelParams,
    homogeneous: Option<Vec<f64>>,
    buf: Vec<f64>,
}

impl<'a> TransitionSource<'a> {
    pub(crate) fn new(params: &'a ModelParams) -> Self {
        let n = params.n_states();
        let homogeneous = (params.n_covariates() == 0).then(|| {
            let mut g = vec![0.0; n * n];
            params.transitions().matrix_into(&[], &mut g);
            g
        });
        TransitionSource {
            params,
            homogeneous,
            buf: vec![0.0; n * n],
        }
    }

    pub(crate) fn at(&mut self, covariates: &[f64]) -> &[f64] {
        match &self.homogeneous {
            Some(g) => g,
            None => {
                self.params.transitions().matrix_into(covariates, &mut self.buf);
                &self.buf
            }
        }
    }
}

pub(crate) fn forward_with(
    params: &ModelParams,
    emissions: &Emissions,
    m: &MatchSeries,
) -> Result<f64> {
    let n = params.n_states();
    let zero_mass = |time| Error::ZeroMass {
        match_id: m.match_id.clone(),
        time,
    };
    let mut trans = TransitionSource::new(params);
    let mut alpha: Vec<f64> = (0..n)
        .map(|i| params.delta()[i] * emissions.get(i, m.counts[0]))
        .collect();
    let mut next = vec![0.0; n];
    let mut total: f64 = alpha.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(zero_mass(0));
    }
    let mut ll = total.ln();
    alpha.iter_mut().for_each(|a| *a /= total);
    for t in 1..m.len() {
        let gamma = trans.at(&m.covariates[t]);
        for (j, slot) in next.iter_mut().enumerate() {
            let mut s = 0.0;
            for (i, a) in alpha.iter().enumerate() {
                s += a * gamma[i * n + j];
            }
            *slot = s * emissions.get(j, m.counts[t]);
        }
        total = next.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(zero_mass(t));
        }
        ll += total.ln();
        for (a, v) in alpha.iter_mut().zip(&next) {
            *a = v / total;
        }
    }
    Ok(ll)
}

fn check_covariates(params: &ModelParams, m: &MatchSeries) -> Result<()> {
    if m.n_covariates() != params.n_covariates() {
        return Err(Error::InvalidArgument(format!(
            "match '{}' has {} covariates, model expects {}",
            m.match_id,
            m.n_covariates(),
            params.n_covariates()
        )));
    }
    Ok(())
}

/// Log-likelihood of a single match.
pub fn log_forward(params: &ModelParams, m: &MatchSeries) -> Result<f64> {
    check_covariates(params, m)?;
    let emissions = Emissions::new(params, m.max_counts())?;
    forward_with(params, &emissions, m)
}

/// Sum of per-match log-likelihoods.
pub fn log_likelihood(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let emissions = Emissions::new(params, data.max_counts())?;
    data.matches().iter().try_fold(0.0, |acc, m| {
        check_covariates(params, m)?;
        Ok(acc + forward_with(params, &emissions, m)?)
    })
}

/// `(AIC, BIC)` with `p = spec.num_params()` and `n_obs` total time points.
pub fn information_criteria(loglik: f64, spec: &ModelSpec, n_obs: usize) -> (f64, f64) {
    information_criteria_for(loglik, spec.num_params(), n_obs)
}

pub fn information_criteria_for(loglik: f64, num_params: usize, n_obs: usize) -> (f64, f64) {
    let p = num_params as f64;
    (-2.0 * loglik + 2.0 * p, -2.0 * loglik + p * (n_obs as f64).ln())
}
