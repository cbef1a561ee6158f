//! Synthetic match series drawn from a fitted or constructed model.
//!
//! Covariates are generated alongside the chain: the minute is the time
//! index, the score difference moves with goals (each simulated shot on goal
//! converts with a fixed probability, the opponent scores at a constant
//! per-minute rate), and every other covariate is held at a constant.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmp::Cmp;
use crate::copula::bivariate_pmf_table;
use crate::data::{Dataset, MatchSeries};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, ModelSpec};

/// Tail mass beyond which the emission support is truncated.
pub const SIMULATION_TAIL: f64 = 1e-10;
/// Largest count the truncated support may reach.
pub const MAX_SUPPORT: u64 = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateGenerator {
    /// Probability that a shot on goal becomes a goal.
    pub conversion: f64,
    /// Per-minute probability that the opponent scores.
    pub opponent_goal_rate: f64,
    /// Values for covariates other than `minute` and `score_diff`.
    pub constants: BTreeMap<String, f64>,
}

impl Default for CovariateGenerator {
    fn default() -> Self {
        CovariateGenerator {
            conversion: 0.3,
            opponent_goal_rate: 0.015,
            constants: BTreeMap::from([
                ("home".to_string(), 1.0),
                ("opp_market_value".to_string(), 200.0),
            ]),
        }
    }
}

impl CovariateGenerator {
    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(0.0..=1.0).contains(&self.conversion) || !(0.0..=1.0).contains(&self.opponent_goal_rate) {
            return Err(invalid("conversion and opponent goal rate must be probabilities"));
        }
        for name in spec.covariate_names() {
            if name != "minute" && name != "score_diff" && !self.constants.contains_key(name) {
                return Err(invalid(format!("no generator value for covariate '{name}'")));
            }
        }
        Ok(())
    }

    fn raw(&self, name: &str, minute: i64, score_diff: i64) -> f64 {
        match name {
            "minute" => minute as f64,
            "score_diff" => score_diff as f64,
            other => self.constants[other],
        }
    }
}

/// A simulated match with its hidden path and unscaled covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedMatch {
    pub series: MatchSeries,
    /// Zero-based hidden states.
    pub states: Vec<usize>,
    pub score_diff: Vec<i64>,
    /// Covariates before standardization, in model order.
    pub raw_covariates: Vec<Vec<f64>>,
}

/// Truncated joint emission tables with cumulative sums for inverse-cdf draws.
pub struct EmissionSampler {
    /// Per state: cumulative row masses, and per row the cumulative cell masses.
    rows: Vec<Vec<f64>>,
    cells: Vec<Vec<Vec<f64>>>,
}

fn support_bound(m: &Cmp) -> Result<u64> {
    m.upper_quantile(SIMULATION_TAIL, MAX_SUPPORT).ok_or_else(|| {
        Error::Numerical(format!(
            "emission support exceeds {MAX_SUPPORT} counts at tail mass {SIMULATION_TAIL:e} for {:?}",
            m.params()
        ))
    })
}

fn cumulative(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn search(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

impl EmissionSampler {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let mut rows = vec![];
        let mut cells = vec![];
        for (pair, copula) in params.marginals().iter().zip(params.copulas()) {
            let m1 = Cmp::new(pair[0])?;
            let m2 = Cmp::new(pair[1])?;
            let table = bivariate_pmf_table(copula, &m1, &m2, support_bound(&m1)?, support_bound(&m2)?)?;
            rows.push(cumulative(table.iter().map(|r| r.iter().sum())));
            cells.push(table.iter().map(|r| cumulative(r.iter().copied())).collect());
        }
        Ok(EmissionSampler { rows, cells })
    }

    /// Draws `(y1, y2)` by first inverting the marginal of `y1`, then the
    /// conditional of `y2` given `y1`, both on the truncated support.
    pub fn sample<R: Rng>(&self, state: usize, rng: &mut R) -> [u64; 2] {
        let rows = &self.rows[state];
        let y1 = search(rows, rng.random::<f64>() * rows[rows.len() - 1]);
        let row = &self.cells[state][y1];
        let y2 = search(row, rng.random::<f64>() * row[row.len() - 1]);
        [y1 as u64, y2 as u64]
    }
}

fn draw_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Simulates one match of `minutes` minutes (numbered from 1).
pub fn simulate_match(
    spec: &ModelSpec,
    params: &ModelParams,
    minutes: usize,
    generator: &CovariateGenerator,
    match_id: impl Into<String>,
    seed: u64,
) -> Result<SimulatedMatch> {
    let sampler = EmissionSampler::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with(spec, params, &sampler, minutes, generator, match_id.into(), &mut rng)
}

fn simulate_with<R: Rng>(
    spec: &ModelSpec,
    params: &ModelParams,
    sampler: &EmissionSampler,
    minutes: usize,
    generator: &CovariateGenerator,
    match_id: String,
    rng: &mut R,
) -> Result<SimulatedMatch> {
    if minutes == 0 {
        return Err(invalid("a match needs at least one minute"));
    }
    if params.n_states() != spec.n_states() || params.n_covariates() != spec.n_covariates() {
        return Err(invalid("parameters do not match the model specification"));
    }
    generator.validate(spec)?;
    let n = spec.n_states();
    let mut states = Vec::with_capacity(minutes);
    let mut counts = Vec::with_capacity(minutes);
    let mut score = Vec::with_capacity(minutes);
    let mut raw = Vec::with_capacity(minutes);
    let mut x = Vec::with_capacity(minutes);
    let mut gamma = vec![0.0; n * n];
    let mut diff = 0i64;
    for t in 0..minutes {
        let minute = t as i64 + 1;
        let r: Vec<f64> = spec
            .covariate_names()
            .iter()
            .map(|name| generator.raw(name, minute, diff))
            .collect();
        let xt = spec.standardize(&r)?;
        let s = if t == 0 {
            draw_index(params.delta(), rng)
        } else {
            params.transitions().matrix_into(&xt, &mut gamma);
            let prev = states[t - 1];
            draw_index(&gamma[prev * n..(prev + 1) * n], rng)
        };
        let y = sampler.sample(s, rng);
        score.push(diff);
        states.push(s);
        counts.push(y);
        raw.push(r);
        x.push(xt);
        for _ in 0..y[0] {
            if rng.random::<f64>() < generator.conversion {
                diff += 1;
            }
        }
        if rng.random::<f64>() < generator.opponent_goal_rate {
            diff -= 1;
        }
    }
    let series = MatchSeries::new(match_id, (1..=minutes as i64).collect(), counts, x)?;
    Ok(SimulatedMatch {
        series,
        states,
        score_diff: score,
        raw_covariates: raw,
    })
}

/// Simulates `n_matches` independent matches named `sim1`, `sim2`, … from
/// one seeded stream.
pub fn simulate_matches(
    spec: &ModelSpec,
    params: &ModelParams,
    n_matches: usize,
    minutes: usize,
    generator: &CovariateGenerator,
    seed: u64,
) -> Result<Vec<SimulatedMatch>> {
    let sampler = EmissionSampler::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_matches)
        .map(|k| simulate_with(spec, params, &sampler, minutes, generator, format!("sim{}", k + 1), &mut rng))
        .collect()
}

/// Dataset view of simulated matches, carrying the model's scaling.
pub fn simulated_dataset(spec: &ModelSpec, sims: &[SimulatedMatch]) -> Result<Dataset> {
    Dataset::new(
        sims.iter().map(|s| s.series.clone()).collect(),
        spec.covariate_names().to_vec(),
        spec.standardization().to_vec(),
    )
}
