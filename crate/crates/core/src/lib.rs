//! Copula-based hidden Markov models for bivariate count time series.
//!
//! Each hidden state carries two Conway–Maxwell–Poisson margins (shots on
//! goal, ball touches) joined by a Frank, Clayton or AMH copula, or treated
//! as conditionally independent. Transition probabilities may depend on
//! covariates through a multinomial logit. The crate provides the forward
//! likelihood, multi-start maximum-likelihood fitting, Viterbi decoding,
//! stationary-distribution analysis, simulation and CSV/model-file I/O.

extern crate self as copula_hmm;

pub mod cmp;
pub mod copula;
pub mod data;
pub mod decode;
pub mod error;
pub mod estimation;
pub mod likelihood;
pub mod model;
pub mod io;
pub mod optim;
pub mod simulate;

pub use error::{Error, Result};

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod test_support;
