//! Global state decoding (Viterbi) and stationary distributions of the
//! hidden chain at frozen covariate values.

use nalgebra::{DMatrix, DVector};

use crate::data::MatchSeries;
use crate::error::{invalid, Error, Result};
use crate::likelihood::{Emissions, TransitionSource};
use crate::model::{ModelParams, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSequence {
    pub match_id: String,
    /// Zero-based state per time point.
    pub states: Vec<usize>,
    /// Log of the maximized joint probability of path and observations.
    pub log_joint: f64,
}

/// Most likely hidden path for one match.
///
/// Ties are resolved toward the lower state index, both when choosing the
/// predecessor of a state and when choosing the final state.
pub fn viterbi(params: &ModelParams, m: &MatchSeries) -> Result<DecodedSequence> {
    if m.n_covariates() != params.n_covariates() {
        return Err(invalid(format!(
            "match '{}' has {} covariates, model expects {}",
            m.match_id,
            m.n_covariates(),
            params.n_covariates()
        )));
    }
    let emissions = Emissions::new(params, m.max_counts())?;
    viterbi_with(params, &emissions, m)
}

pub(crate) fn viterbi_with(
    params: &ModelParams,
    emissions: &Emissions,
    m: &MatchSeries,
) -> Result<DecodedSequence> {
    let n = params.n_states();
    let t_len = m.len();
    let underflow = |time| Error::ZeroMass {
        match_id: m.match_id.clone(),
        time,
    };
    let mut trans = TransitionSource::new(params);
    let mut score: Vec<f64> = (0..n)
        .map(|i| params.delta()[i].ln() + emissions.get(i, m.counts[0]).ln())
        .collect();
    if score.iter().all(|s| *s == f64::NEG_INFINITY) {
        return Err(underflow(0));
    }
    let mut back = vec![0usize; t_len * n];
    let mut next = vec![0.0; n];
    let mut log_gamma = vec![0.0; n * n];
    for t in 1..t_len {
        for (lg, g) in log_gamma.iter_mut().zip(trans.at(&m.covariates[t])) {
            *lg = g.ln();
        }
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..n {
                let v = score[i] + log_gamma[i * n + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            back[t * n + j] = arg;
            next[j] = best + emissions.get(j, m.counts[t]).ln();
        }
        if next.iter().all(|s| *s == f64::NEG_INFINITY) {
            return Err(underflow(t));
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    for (i, &s) in score.iter().enumerate() {
        if s > score[last] {
            last = i;
        }
    }
    let log_joint = score[last];
    let mut states = vec![0; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t * n + states[t]];
    }
    Ok(DecodedSequence {
        match_id: m.match_id.clone(),
        states,
        log_joint,
    })
}

/// Solves `δΓ = δ`, `Σδ = 1` for a stochastic matrix.
///
/// Uses the nonsingular system `δ(I − Γ + U) = 1` (U all ones), followed by
/// one step of iterative refinement. Singular systems (several closed
/// classes) are rejected.
pub fn stationary_distribution(tpm: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = tpm.nrows();
    if n == 0 || tpm.ncols() != n {
        return Err(invalid("transition matrix must be square and nonempty"));
    }
    for i in 0..n {
        let row = tpm.row(i);
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!("row {i} has negative or non-finite entries")));
        }
        if (row.sum() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("row {i} sums to {}", row.sum())));
        }
    }
    // Transposed system: (I − Γ + U)ᵀ δᵀ = 1.
    let a = (DMatrix::identity(n, n) - tpm + DMatrix::from_element(n, n, 1.0)).transpose();
    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::Numerical(
            "stationary distribution is not unique (transition matrix is reducible)".into(),
        ));
    }
    let lu = a.clone().lu();
    let ones = DVector::from_element(n, 1.0);
    let mut delta = lu
        .solve(&ones)
        .ok_or_else(|| Error::Numerical("singular stationary system".into()))?;
    let residual = &ones - &a * &delta;
    if let Some(correction) = lu.solve(&residual) {
        delta += correction;
    }
    let total = delta.sum();
    Ok(delta.iter().map(|v| (v / total).max(0.0)).collect())
}

/// One row of a covariate profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    /// Sweep value on the raw (unstandardized) scale.
    pub value: f64,
    pub stationary: Vec<f64>,
}

/// Resolves a full raw covariate vector from named fixed values plus one
/// swept covariate, then standardizes it.
pub fn covariate_vector(
    spec: &ModelSpec,
    fixed: &[(String, f64)],
    sweep: Option<(&str, f64)>,
) -> Result<Vec<f64>> {
    for (name, _) in fixed {
        if spec.covariate_index(name).is_none() {
            return Err(invalid(format!("model has no covariate '{name}'")));
        }
    }
    let raw = spec
        .covariate_names()
        .iter()
        .map(|name| {
            if let Some((s, v)) = sweep {
                if s == name {
                    return Ok(v);
                }
            }
            fixed
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| invalid(format!("no value given for covariate '{name}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    spec.standardize(&raw)
}

/// Stationary distributions of `Γ(x)` as one covariate sweeps over
/// `values` (raw scale) with the others held at `fixed` (raw scale).
pub fn covariate_profile(
    spec: &ModelSpec,
    params: &ModelParams,
    sweep: &str,
    values: &[f64],
    fixed: &[(String, f64)],
) -> Result<Vec<ProfileRow>> {
    if spec.covariate_index(sweep).is_none() {
        return Err(invalid(format!("model has no covariate '{sweep}'")));
    }
    values
        .iter()
        .map(|&v| {
            let x = covariate_vector(spec, fixed, Some((sweep, v)))?;
            let gamma = params.transition_matrix(&x)?;
            Ok(ProfileRow {
                value: v,
                stationary: stationary_distribution(&gamma)?,
            })
        })
        .collect()
}
