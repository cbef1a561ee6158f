//! Published three-state Clayton model used by several tests.

use copula_hmm::cmp::CmpParams;
use copula_hmm::copula::CopulaFamily;
use copula_hmm::decode::stationary_distribution;
use copula_hmm::model::{ModelParams, ModelSpec, TransitionCoefficients};
use nalgebra::DMatrix;

pub fn cmp(lambda: f64, nu: f64) -> CmpParams {
    CmpParams::new(lambda, nu).unwrap()
}

/// Homogeneous 3-state Clayton model; "ν ≈ 0" entries are 1e-8 and the
/// initial distribution is the stationary one.
pub fn table3() -> (ModelSpec, ModelParams) {
    let spec = ModelSpec::homogeneous(3, CopulaFamily::Clayton).unwrap();
    let gamma = DMatrix::from_row_slice(
        3,
        3,
        &[0.471, 0.054, 0.475, 0.006, 0.988, 0.006, 0.194, 0.001, 0.805],
    );
    let delta = stationary_distribution(&gamma).unwrap();
    let params = ModelParams::new(
        &spec,
        vec![
            [cmp(0.212, 0.631), cmp(0.670, 1e-8)],
            [cmp(0.117, 1e-8), cmp(1.093, 0.149)],
            [cmp(0.128, 0.002), cmp(2.145, 0.352)],
        ],
        vec![1.721, 0.510, -0.048],
        delta,
        TransitionCoefficients::from_matrix(&gamma, 0).unwrap(),
    )
    .unwrap();
    (spec, params)
}

/// Homogeneous 2-state Clayton model with well separated touch margins.
pub fn two_state_clayton() -> (ModelSpec, ModelParams) {
    let spec = ModelSpec::homogeneous(2, CopulaFamily::Clayton).unwrap();
    let gamma = DMatrix::from_row_slice(2, 2, &[0.92, 0.08, 0.1, 0.9]);
    let params = ModelParams::new(
        &spec,
        vec![[cmp(0.1, 1.0), cmp(1.5, 0.8)], [cmp(0.3, 1.0), cmp(8.0, 1.0)]],
        vec![1.5, 2.5],
        vec![0.5, 0.5],
        TransitionCoefficients::from_matrix(&gamma, 0).unwrap(),
    )
    .unwrap();
    (spec, params)
}
