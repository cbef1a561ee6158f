//! Model specification, parameter containers, and the map between natural
//! and unconstrained working parameters.
//!
//! Variable 1 is shots on goal, variable 2 ball touches. Transition
//! probabilities follow a multinomial logit with the diagonal as reference:
//! `γ_ij = exp(η_ij) / Σ_k exp(η_ik)`, `η_ii = 0`,
//! `η_ij = β0 + Σ_l β_l x_l` for `i ≠ j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cmp::{Cmp, CmpParams, DEFAULT_MEAN_TRUNCATION};
use crate::copula::{bivariate_pmf, bivariate_pmf_table, Copula, CopulaFamily};
use crate::error::{invalid, Result};

/// Lower clamp applied to ν when mapping to working space.
pub const NU_FLOOR: f64 = 1e-8;

/// Location/scale used to standardize one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub const IDENTITY: Standardization = Standardization { mean: 0.0, sd: 1.0 };

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    n_states: usize,
    family: CopulaFamily,
    covariate_names: Vec<String>,
    standardization: Vec<Standardization>,
}

impl ModelSpec {
    pub fn new(
        n_states: usize,
        family: CopulaFamily,
        covariate_names: Vec<String>,
        standardization: Vec<Standardization>,
    ) -> Result<Self> {
        if n_states == 0 {
            return Err(invalid("number of states must be at least 1"));
        }
        if covariate_names.len() != standardization.len() {
            return Err(invalid(format!(
                "{} covariates but {} standardization entries",
                covariate_names.len(),
                standardization.len()
            )));
        }
        for (i, name) in covariate_names.iter().enumerate() {
            if covariate_names[..i].contains(name) {
                return Err(invalid(format!("duplicate covariate '{name}'")));
            }
        }
        for (name, s) in covariate_names.iter().zip(&standardization) {
            if !(s.mean.is_finite() && s.sd.is_finite() && s.sd > 0.0) {
                return Err(invalid(format!("bad standardization for '{name}': {s:?}")));
            }
        }
        Ok(ModelSpec {
            n_states,
            family,
            covariate_names,
            standardization,
        })
    }

    /// A model without covariates (homogeneous chain).
    pub fn homogeneous(n_states: usize, family: CopulaFamily) -> Result<Self> {
        ModelSpec::new(n_states, family, vec![], vec![])
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn standardization(&self) -> &[Standardization] {
        &self.standardization
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn standardize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.n_covariates() {
            return Err(invalid(format!(
                "expected {} covariate values, got {}",
                self.n_covariates(),
                raw.len()
            )));
        }
        Ok(raw
            .iter()
            .zip(&self.standardization)
            .map(|(&v, s)| s.apply(v))
            .collect())
    }

    /// Number of free parameters: 4N marginal + N copula (none for
    /// independence) + (N − 1) initial + N(N − 1)(p + 1) transition.
    pub fn num_params(&self) -> usize {
        let n = self.n_states;
        let thetas = if self.family.has_parameter() { n } else { 0 };
        4 * n + thetas + (n - 1) + n * (n - 1) * (self.n_covariates() + 1)
    }
}

/// Logit coefficients for every off-diagonal transition `i → j`, each a
/// vector `(β0, β1, …, βp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCoefficients {
    n_states: usize,
    n_coef: usize,
    values: Vec<f64>,
}

impl TransitionCoefficients {
    pub fn zeros(n_states: usize, n_covariates: usize) -> Self {
        let n_coef = n_covariates + 1;
        TransitionCoefficients {
            n_states,
            n_coef,
            values: vec![0.0; n_states * n_states.saturating_sub(1) * n_coef],
        }
    }

    /// Intercept-only coefficients reproducing a homogeneous `gamma`
    /// (`β0_ij = ln(γ_ij / γ_ii)`), padded with zero slopes.
    pub fn from_matrix(gamma: &DMatrix<f64>, n_covariates: usize) -> Result<Self> {
        let n = gamma.nrows();
        if gamma.ncols() != n {
            return Err(invalid("transition matrix must be square"));
        }
        let mut out = TransitionCoefficients::zeros(n, n_covariates);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (a, b) = (gamma[(i, j)], gamma[(i, i)]);
                    if !(a > 0.0 && b > 0.0) {
                        return Err(invalid("logit parameterization needs strictly positive γ"));
                    }
                    out.get_mut(i, j)[0] = (a / b).ln();
                }
            }
        }
        Ok(out)
    }

    pub fn from_values(n_states: usize, n_covariates: usize, values: Vec<f64>) -> Result<Self> {
        let mut out = TransitionCoefficients::zeros(n_states, n_covariates);
        if values.len() != out.values.len() {
            return Err(invalid(format!(
                "expected {} transition coefficients, got {}",
                out.values.len(),
                values.len()
            )));
        }
        out.values = values;
        Ok(out)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_covariates(&self) -> usize {
        self.n_coef - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        assert!(i != j && i < self.n_states && j < self.n_states, "bad pair ({i}, {j})");
        let col = if j > i { j - 1 } else { j };
        (i * (self.n_states - 1) + col) * self.n_coef
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.values[o..o + self.n_coef]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        &mut self.values[o..o + self.n_coef]
    }

    /// Row-major `N × N` transition matrix at standardized covariates `x`.
    pub fn matrix_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n_states;
        debug_assert_eq!(x.len() + 1, self.n_coef);
        debug_assert_eq!(out.len(), n * n);
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for (j, eta) in row.iter_mut().enumerate() {
                *eta = if i == j {
                    0.0
                } else {
                    let b = self.get(i, j);
                    b[0] + b[1..].iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
                };
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
}

/// Natural parameters of an `N`-state model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    marginals: Vec<[CmpParams; 2]>,
    copulas: Vec<Copula>,
    delta: Vec<f64>,
    transitions: TransitionCoefficients,
}

impl ModelParams {
    /// `thetas` must be empty for the independence family.
    pub fn new(
        spec: &ModelSpec,
        marginals: Vec<[CmpParams; 2]>,
        thetas: Vec<f64>,
        delta: Vec<f64>,
        transitions: TransitionCoefficients,
    ) -> Result<Self> {
        let n = spec.n_states();
        if marginals.len() != n {
            return Err(invalid(format!("expected {n} marginal pairs, got {}", marginals.len())));
        }
        let copulas = if spec.family().has_parameter() {
            if thetas.len() != n {
                return Err(invalid(format!("expected {n} copula parameters, got {}", thetas.len())));
            }
            thetas
                .iter()
                .map(|&t| Copula::new(spec.family(), t))
                .collect::<std::result::Result<Vec<_>, _>>()?
        } else {
            if !thetas.is_empty() {
                return Err(invalid("independence model takes no copula parameters"));
            }
            vec![Copula::independence(); n]
        };
        if delta.len() != n {
            return Err(invalid(format!("initial distribution must have {n} entries")));
        }
        if delta.iter().any(|&d| !(d >= 0.0)) || (delta.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("initial distribution {delta:?} is not a probability vector")));
        }
        if transitions.n_states() != n || transitions.n_covariates() != spec.n_covariates() {
            return Err(invalid(format!(
                "transition coefficients sized for {} states / {} covariates, spec has {n} / {}",
                transitions.n_states(),
                transitions.n_covariates(),
                spec.n_covariates()
            )));
        }
        if transitions.values().iter().any(|v| !v.is_finite()) {
            return Err(invalid("transition coefficients must be finite"));
        }
        Ok(ModelParams {
            marginals,
            copulas,
            delta,
            transitions,
        })
    }

    pub fn n_states(&self) -> usize {
        self.marginals.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.transitions.n_covariates()
    }

    pub fn family(&self) -> CopulaFamily {
        self.copulas[0].family()
    }

    pub fn marginals(&self) -> &[[CmpParams; 2]] {
        &self.marginals
    }

    pub fn copulas(&self) -> &[Copula] {
        &self.copulas
    }

    /// Copula parameters; empty for the independence family.
    pub fn thetas(&self) -> Vec<f64> {
        if self.family().has_parameter() {
            self.copulas.iter().map(|c| c.theta()).collect()
        } else {
            vec![]
        }
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn transitions(&self) -> &TransitionCoefficients {
        &self.transitions
    }

    /// Transition matrix at standardized covariates.
    pub fn transition_matrix(&self, covariates: &[f64]) -> Result<DMatrix<f64>> {
        if covariates.len() != self.n_covariates() {
            return Err(invalid(format!(
                "expected {} covariate values, got {}",
                self.n_covariates(),
                covariates.len()
            )));
        }
        let n = self.n_states();
        let mut buf = vec![0.0; n * n];
        self.transitions.matrix_into(covariates, &mut buf);
        Ok(DMatrix::from_row_slice(n, n, &buf))
    }

    /// `f(y | s = state)`, with `state` zero-based.
    pub fn state_joint_pmf(&self, state: usize, y: [u64; 2]) -> Result<f64> {
        if state >= self.n_states() {
            return Err(invalid(format!("state {state} out of range")));
        }
        let [a, b] = self.marginals[state];
        let (m1, m2) = (Cmp::new(a)?, Cmp::new(b)?);
        Ok(bivariate_pmf(&self.copulas[state], &m1, &m2, y[0], y[1])?)
    }

    /// Emission tables `table[state][y1][y2]` covering `y1 ≤ max1`, `y2 ≤ max2`.
    pub fn emission_tables(&self, max1: u64, max2: u64) -> Result<Vec<Vec<Vec<f64>>>> {
        self.marginals
            .iter()
            .zip(&self.copulas)
            .map(|([a, b], c)| {
                let (m1, m2) = (Cmp::new(*a)?, Cmp::new(*b)?);
                Ok(bivariate_pmf_table(c, &m1, &m2, max1, max2)?)
            })
            .collect()
    }

    /// Per-state truncated means `[shots, touches]`.
    pub fn state_means(&self) -> Result<Vec<[f64; 2]>> {
        self.marginals
            .iter()
            .map(|[a, b]| {
                Ok([
                    Cmp::new(*a)?.mean(DEFAULT_MEAN_TRUNCATION),
                    Cmp::new(*b)?.mean(DEFAULT_MEAN_TRUNCATION),
                ])
            })
            .collect()
    }

    /// State indices sorted by ascending mean ball touches; `order[k]` is the
    /// fitted state reported as label `k`.
    pub fn touch_order(&self) -> Result<Vec<usize>> {
        let means = self.state_means()?;
        let mut order: Vec<usize> = (0..self.n_states()).collect();
        order.sort_by(|&a, &b| means[a][1].total_cmp(&means[b][1]).then(a.cmp(&b)));
        Ok(order)
    }

    /// Relabels states so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_states();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid(format!("{perm:?} is not a permutation of {n} states")));
        }
        let mut transitions = TransitionCoefficients::zeros(n, self.n_covariates());
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    transitions
                        .get_mut(i, j)
                        .copy_from_slice(self.transitions.get(perm[i], perm[j]));
                }
            }
        }
        Ok(ModelParams {
            marginals: perm.iter().map(|&p| self.marginals[p]).collect(),
            copulas: perm.iter().map(|&p| self.copulas[p]).collect(),
            delta: perm.iter().map(|&p| self.delta[p]).collect(),
            transitions,
        })
    }

    /// Maps to the unconstrained working vector.
    ///
    /// Layout: per state `[ln λ1, ln ν1, ln λ2, ln ν2]`; then copula
    /// parameters (Frank identity, Clayton `ln(θ + 1)`, AMH `atanh θ`); then
    /// `ln(δ_k / δ_1)` for `k ≥ 2`; then transition coefficients.
    pub fn pack(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.working_len());
        for pair in &self.marginals {
            for m in pair {
                w.push(m.lambda().ln());
                w.push(m.nu().max(NU_FLOOR).ln());
            }
        }
        if self.family().has_parameter() {
            for c in &self.copulas {
                w.push(match c.family() {
                    CopulaFamily::Frank => c.theta(),
                    CopulaFamily::Clayton => (c.theta() + 1.0).max(f64::MIN_POSITIVE).ln(),
                    CopulaFamily::Amh => c.theta().max(-1.0 + 1e-15).atanh(),
                    CopulaFamily::Independence => unreachable!(),
                });
            }
        }
        let ln_first = self.delta[0].max(f64::MIN_POSITIVE).ln();
        for d in &self.delta[1..] {
            w.push(d.max(f64::MIN_POSITIVE).ln() - ln_first);
        }
        w.extend_from_slice(self.transitions.values());
        w
    }

    fn working_len(&self) -> usize {
        let n = self.n_states();
        let thetas = if self.family().has_parameter() { n } else { 0 };
        4 * n + thetas + (n - 1) + self.transitions.values().len()
    }

    /// Inverse of [`ModelParams::pack`].
    pub fn unpack(spec: &ModelSpec, working: &[f64]) -> Result<Self> {
        if working.len() != spec.num_params() {
            return Err(invalid(format!(
                "working vector has length {}, expected {}",
                working.len(),
                spec.num_params()
            )));
        }
        let n = spec.n_states();
        let mut it = working.iter().copied();
        let mut next = || it.next().expect("length checked");
        let mut marginals = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pair = [CmpParams::new(1.0, 1.0)?; 2];
            for m in pair.iter_mut() {
                let lambda = next().exp();
                let nu = next().exp();
                *m = CmpParams::new(lambda, nu)?;
            }
            marginals.push(pair);
        }
        let thetas: Vec<f64> = if spec.family().has_parameter() {
            (0..n)
                .map(|_| {
                    let w = next();
                    match spec.family() {
                        CopulaFamily::Frank => w,
                        CopulaFamily::Clayton => w.exp_m1(),
                        CopulaFamily::Amh => w.tanh(),
                        CopulaFamily::Independence => unreachable!(),
                    }
                })
                .collect()
        } else {
            vec![]
        };
        let mut logits = vec![0.0];
        logits.extend((1..n).map(|_| next()));
        let delta = softmax(&logits);
        let rest: Vec<f64> = std::iter::from_fn(|| Some(next()))
            .take(n * (n - 1) * (spec.n_covariates() + 1))
            .collect();
        let transitions = TransitionCoefficients::from_values(n, spec.n_covariates(), rest)?;
        ModelParams::new(spec, marginals, thetas, delta, transitions)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cmp::Cmp;

    fn cmp(lambda: f64, nu: f64) -> CmpParams {
        CmpParams::new(lambda, nu).unwrap()
    }

    pub(crate) fn table3() -> (ModelSpec, ModelParams) {
        let spec = ModelSpec::homogeneous(3, CopulaFamily::Clayton).unwrap();
        let gamma = DMatrix::from_row_slice(
            3,
            3,
            &[0.471, 0.054, 0.475, 0.006, 0.988, 0.006, 0.194, 0.001, 0.805],
        );
        let params = ModelParams::new(
            &spec,
            vec![
                [cmp(0.212, 0.631), cmp(0.670, 1e-8)],
                [cmp(0.117, 1e-8), cmp(1.093, 0.149)],
                [cmp(0.128, 0.002), cmp(2.145, 0.352)],
            ],
            vec![1.721, 0.510, -0.048],
            vec![0.2, 0.5, 0.3],
            TransitionCoefficients::from_matrix(&gamma, 0).unwrap(),
        )
        .unwrap();
        (spec, params)
    }

    #[test]
    fn num_params_examples() {
        let n = |k, f| ModelSpec::homogeneous(k, f).unwrap().num_params();
        assert_eq!(n(3, CopulaFamily::Clayton), 23);
        assert_eq!(n(2, CopulaFamily::Clayton), 13);
        assert_eq!(n(4, CopulaFamily::Clayton), 35);
        assert_eq!(n(5, CopulaFamily::Clayton), 49);
        assert_eq!(n(1, CopulaFamily::Independence), 4);
        for k in 1..6 {
            assert_eq!(n(k, CopulaFamily::Frank), k * k + 5 * k - 1);
        }
        let spec = ModelSpec::new(
            3,
            CopulaFamily::Clayton,
            vec!["a".into(), "b".into()],
            vec![Standardization::IDENTITY; 2],
        )
        .unwrap();
        assert_eq!(spec.num_params(), 23 + 2 * 6);
    }

    #[test]
    fn num_params_reproduces_criterion_gaps() {
        // Table gaps BIC − AIC for N = 2..5 states.
        let gaps = [79.0, 140.0, 213.0, 298.0];
        for (k, gap) in (2..=5).zip(gaps) {
            let p = ModelSpec::homogeneous(k, CopulaFamily::Amh).unwrap().num_params() as f64;
            assert!((p * ((3214f64).ln() - 2.0) - gap).abs() <= 1.0, "N = {k}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::homogeneous(0, CopulaFamily::Frank).is_err());
        assert!(ModelSpec::new(
            2,
            CopulaFamily::Frank,
            vec!["a".into(), "a".into()],
            vec![Standardization::IDENTITY; 2]
        )
        .is_err());
        assert!(ModelSpec::new(2, CopulaFamily::Frank, vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn uniform_transitions_from_zero_coefficients() {
        let t = TransitionCoefficients::zeros(3, 0);
        let mut out = vec![0.0; 9];
        t.matrix_into(&[], &mut out);
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_inversion_reproduces_two_state_matrix() {
        let spec = ModelSpec::homogeneous(2, CopulaFamily::Independence).unwrap();
        let mut t = TransitionCoefficients::zeros(2, 0);
        t.get_mut(0, 1)[0] = (0.133f64 / 0.867).ln();
        t.get_mut(1, 0)[0] = (0.280f64 / 0.720).ln();
        assert!((t.get(0, 1)[0] + 1.8747).abs() < 1e-4);
        assert!((t.get(1, 0)[0] + 0.9445).abs() < 1e-4);
        let params = ModelParams::new(
            &spec,
            vec![[cmp(0.125, 0.206), cmp(0.971, 0.102)], [cmp(0.149, 0.001), cmp(2.381, 0.390)]],
            vec![],
            vec![0.258, 0.742],
            t,
        )
        .unwrap();
        let g = params.transition_matrix(&[]).unwrap();
        let expected = [[0.867, 0.133], [0.280, 0.720]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[(i, j)] - expected[i][j]).abs() < 5e-4);
            }
        }
    }

    #[test]
    fn transition_matrix_rejects_wrong_covariate_length() {
        let (_, params) = table3();
        assert!(params.transition_matrix(&[1.0]).is_err());
    }

    #[test]
    fn state_joint_pmf_dispatch() {
        let spec = ModelSpec::homogeneous(1, CopulaFamily::Independence).unwrap();
        let params = ModelParams::new(
            &spec,
            vec![[cmp(2.0, 1.0), cmp(2.0, 1.0)]],
            vec![],
            vec![1.0],
            TransitionCoefficients::zeros(1, 0),
        )
        .unwrap();
        assert!((params.state_joint_pmf(0, [0, 0]).unwrap() - (-4f64).exp()).abs() < 1e-12);
        assert!(params.state_joint_pmf(1, [0, 0]).is_err());
    }

    #[test]
    fn clayton_near_zero_matches_independence() {
        let margins = vec![[cmp(0.4, 0.8), cmp(3.0, 0.6)]];
        let mk = |family, thetas| {
            let spec = ModelSpec::homogeneous(1, family).unwrap();
            ModelParams::new(&spec, margins.clone(), thetas, vec![1.0], TransitionCoefficients::zeros(1, 0))
                .unwrap()
        };
        let clayton = mk(CopulaFamily::Clayton, vec![1e-9]);
        let indep = mk(CopulaFamily::Independence, vec![]);
        for y1 in 0..=10 {
            for y2 in 0..=10 {
                let a = clayton.state_joint_pmf(0, [y1, y2]).unwrap();
                let b = indep.state_joint_pmf(0, [y1, y2]).unwrap();
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn table3_state3_marginals_are_consistent() {
        let (_, params) = table3();
        let tables = params.emission_tables(60, 120).unwrap();
        let t = &tables[2];
        let shots = Cmp::new(cmp(0.128, 0.002)).unwrap();
        let touches = Cmp::new(cmp(2.145, 0.352)).unwrap();
        for y1 in 0..=5 {
            let s: f64 = t[y1].iter().sum();
            assert!((s - shots.pmf(y1 as u64)).abs() < 1e-8);
        }
        for y2 in 0..=40 {
            let s: f64 = t.iter().map(|row| row[y2]).sum();
            assert!((s - touches.pmf(y2 as u64)).abs() < 1e-8);
        }
    }

    #[test]
    fn pack_examples() {
        let spec = ModelSpec::homogeneous(3, CopulaFamily::Independence).unwrap();
        let params = ModelParams::new(
            &spec,
            vec![[cmp(1.0, 1.0), cmp(1.0, 1.0)]; 3],
            vec![],
            vec![1.0 / 3.0; 3],
            TransitionCoefficients::zeros(3, 0),
        )
        .unwrap();
        let w = params.pack();
        assert_eq!(w.len(), spec.num_params());
        assert_eq!(w[0], 0.0);
        assert!(w[12..14].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn round_trip_table3() {
        let (spec, params) = table3();
        let back = ModelParams::unpack(&spec, &params.pack()).unwrap();
        assert_close(&params, &back, 1e-10);
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        let (spec, params) = table3();
        let mut w = params.pack();
        w.pop();
        assert!(ModelParams::unpack(&spec, &w).is_err());
    }

    #[test]
    fn permutation_round_trip_and_pmf_invariance() {
        let (_, params) = table3();
        let perm = [2, 0, 1];
        let p = params.permuted(&perm).unwrap();
        let mut inverse = [0; 3];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        assert_close(&p.permuted(&inverse).unwrap(), &params, 0.0);
        for (k, &old) in perm.iter().enumerate() {
            for y in [[0, 0], [1, 3], [2, 9]] {
                assert_eq!(p.state_joint_pmf(k, y).unwrap(), params.state_joint_pmf(old, y).unwrap());
            }
        }
        let g = params.transition_matrix(&[]).unwrap();
        let gp = p.transition_matrix(&[]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((gp[(i, j)] - g[(perm[i], perm[j])]).abs() < 1e-15);
            }
        }
        assert!(params.permuted(&[0, 0, 1]).is_err());
    }

    #[test]
    fn touch_order_sorts_by_mean_touches() {
        let (_, params) = table3();
        assert_eq!(params.touch_order().unwrap(), vec![0, 1, 2]);
        let p = params.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.touch_order().unwrap(), vec![1, 2, 0]);
    }

    pub(crate) fn assert_close(a: &ModelParams, b: &ModelParams, tol: f64) {
        let (wa, wb) = (flat(a), flat(b));
        assert_eq!(wa.len(), wb.len());
        for (x, y) in wa.iter().zip(&wb) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    fn flat(p: &ModelParams) -> Vec<f64> {
        let mut v = vec![];
        for pair in p.marginals() {
            for m in pair {
                v.push(m.lambda());
                v.push(m.nu());
            }
        }
        v.extend(p.thetas());
        v.extend_from_slice(p.delta());
        v.extend_from_slice(p.transitions().values());
        v
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_params() -> impl Strategy<Value = (ModelSpec, ModelParams)> {
            (1usize..=5, 0usize..4, 0usize..3).prop_flat_map(|(n, fam, p)| {
                let family = CopulaFamily::ALL[fam];
                let margins = proptest::collection::vec(
                    ((0.05f64..5.0, 0.01f64..2.0), (0.05f64..5.0, 0.01f64..2.0)),
                    n,
                );
                let theta_range = match family {
                    CopulaFamily::Frank => -8.0..8.0,
                    CopulaFamily::Clayton => -0.95..8.0,
                    _ => -0.95..0.95,
                };
                let thetas = proptest::collection::vec(theta_range, n);
                let delta = proptest::collection::vec(0.05f64..1.0, n);
                let coefs = proptest::collection::vec(-4.0f64..4.0, n * (n - 1) * (p + 1));
                (margins, thetas, delta, coefs).prop_map(move |(m, t, d, c)| {
                    let spec = ModelSpec::new(
                        n,
                        family,
                        (0..p).map(|i| format!("x{i}")).collect(),
                        vec![Standardization::IDENTITY; p],
                    )
                    .unwrap();
                    let total: f64 = d.iter().sum();
                    let params = ModelParams::new(
                        &spec,
                        m.into_iter().map(|((a, b), (c, d))| [cmp(a, b), cmp(c, d)]).collect(),
                        if family.has_parameter() { t } else { vec![] },
                        d.into_iter().map(|v| v / total).collect(),
                        TransitionCoefficients::from_values(n, p, c).unwrap(),
                    )
                    .unwrap();
                    (spec, params)
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn pack_unpack_round_trip((spec, params) in arb_params()) {
                let back = ModelParams::unpack(&spec, &params.pack()).unwrap();
                let (a, b) = (flat(&params), flat(&back));
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{} vs {}", x, y);
                }
            }

            #[test]
            fn rows_are_positive_and_stochastic(
                (_, params) in arb_params(),
                x in proptest::collection::vec(-5.0f64..5.0, 3),
            ) {
                let p = params.n_covariates();
                let g = params.transition_matrix(&x[..p]).unwrap();
                for i in 0..g.nrows() {
                    let row = g.row(i);
                    prop_assert!(row.iter().all(|&v| v > 0.0));
                    prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
