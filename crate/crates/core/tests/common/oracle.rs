//! Independent reference implementations used by the tests: exhaustive
//! enumeration over hidden paths and random model/data generators.
#![allow(dead_code)]

use copula_hmm::cmp::CmpParams;
use copula_hmm::copula::CopulaFamily;
use copula_hmm::data::MatchSeries;
use copula_hmm::model::{ModelParams, ModelSpec, Standardization, TransitionCoefficients};
use rand::Rng;

/// Log joint probability of one hidden path and the observations.
pub fn log_joint(params: &ModelParams, m: &MatchSeries, path: &[usize]) -> f64 {
    let mut lp = params.delta()[path[0]].ln() + params.state_joint_pmf(path[0], m.counts[0]).unwrap().ln();
    for t in 1..m.len() {
        let g = params.transition_matrix(&m.covariates[t]).unwrap();
        lp += g[(path[t - 1], path[t])].ln() + params.state_joint_pmf(path[t], m.counts[t]).unwrap().ln();
    }
    lp
}

/// Every path in lexicographic order.
pub fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

/// `ln Σ_paths p(path, y)`.
pub fn brute_force_log_likelihood(params: &ModelParams, m: &MatchSeries) -> f64 {
    let lps: Vec<f64> = all_paths(params.n_states(), m.len())
        .iter()
        .map(|p| log_joint(params, m, p))
        .collect();
    let max = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + lps.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Maximizing path; the first in lexicographic order wins ties.
pub fn brute_force_viterbi(params: &ModelParams, m: &MatchSeries) -> (Vec<usize>, f64) {
    let mut best = (vec![], f64::NEG_INFINITY);
    for p in all_paths(params.n_states(), m.len()) {
        let lp = log_joint(params, m, &p);
        if lp > best.1 {
            best = (p, lp);
        }
    }
    best
}

pub fn random_params<R: Rng>(rng: &mut R, n: usize, p: usize) -> (ModelSpec, ModelParams) {
    let family = CopulaFamily::ALL[rng.random_range(0..4)];
    let spec = ModelSpec::new(
        n,
        family,
        (0..p).map(|i| format!("x{i}")).collect(),
        vec![Standardization::IDENTITY; p],
    )
    .unwrap();
    let marginals = (0..n)
        .map(|_| {
            [
                CmpParams::new(rng.random_range(0.1..1.5), rng.random_range(0.2..1.5)).unwrap(),
                CmpParams::new(rng.random_range(0.5..5.0), rng.random_range(0.2..1.2)).unwrap(),
            ]
        })
        .collect();
    let thetas = match family {
        CopulaFamily::Independence => vec![],
        CopulaFamily::Frank => (0..n).map(|_| rng.random_range(-6.0..6.0)).collect(),
        CopulaFamily::Clayton => (0..n).map(|_| rng.random_range(-0.8..5.0)).collect(),
        CopulaFamily::Amh => (0..n).map(|_| rng.random_range(-0.9..0.9)).collect(),
    };
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let coefs = (0..n * (n - 1) * (p + 1)).map(|_| rng.random_range(-2.0..2.0)).collect();
    let params = ModelParams::new(
        &spec,
        marginals,
        thetas,
        raw.iter().map(|r| r / total).collect(),
        TransitionCoefficients::from_values(n, p, coefs).unwrap(),
    )
    .unwrap();
    (spec, params)
}

pub fn random_match<R: Rng>(rng: &mut R, t: usize, p: usize) -> MatchSeries {
    let counts = (0..t)
        .map(|_| [rng.random_range(0..3u64), rng.random_range(0..9u64)])
        .collect();
    let covariates = (0..t)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    MatchSeries::new("rand", (1..=t as i64).collect(), counts, covariates).unwrap()
}

pub fn random_case<R: Rng>(rng: &mut R, n: usize, t: usize, p: usize) -> (ModelParams, MatchSeries) {
    let (_, params) = random_params(rng, n, p);
    (params, random_match(rng, t, p))
}

/// Stationary distribution by repeated multiplication `π ← πΓ`, stopping
/// early once an iteration changes `π` by at most 1e-16.
pub fn power_iteration(gamma: &nalgebra::DMatrix<f64>, steps: usize) -> Vec<f64> {
    let n = gamma.nrows();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..steps {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                next[j] += pi[i] * gamma[(i, j)];
            }
        }
        let s: f64 = next.iter().sum();
        let next: Vec<f64> = next.into_iter().map(|v| v / s).collect();
        if next.iter().zip(&pi).all(|(a, b)| (a - b).abs() <= 1e-16) {
            break;
        }
        pi = next;
    }
    pi
}
