//! Factorial speech-processing models for noise-robust recognition.
//!
//! The crate trains HMM/GMM source models for speech and noise, builds the
//! grid of state-conditional observation distributions `p(y | s_x, s_n)` by
//! vector Taylor series linearisation, data-driven model combination, or
//! weighted stereo samples, and decodes corrupted observations with a
//! two-dimensional Viterbi search over the joint speech/noise state space.
//!
//! Module map:
//!
//! * [`features`]: framing, mel filterbank, DCT, deltas, feature containers
//! * [`mixing`]: SNR-controlled mixing, active level, stereo and synthetic corpora
//! * [`gmm`] / [`hmm`]: mixtures, standard and weighted EM, source HMM training
//! * [`interaction`]: mismatch function, phase factor, VTS Jacobians
//! * [`scod`]: observation-distribution grids (VTS, DPMC/IDPMC, WSS)
//! * [`decoder`]: two-dimensional and mega-state Viterbi, loop grammar
//! * [`eval`]: word accuracy, experiment runner, plots
//! * [`persist`]: model bundles

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod decoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod hmm;
pub mod interaction;
pub mod math;
pub mod mixing;
pub mod persist;
pub mod scod;

pub use error::{Error, ErrorClass, Result};
