//! Conditional sampling for score-based diffusion models on analytic
//! targets: the bidirectional guided score, fast Langevin dynamics with an
//! exact oscillator kernel, the usual training-free baselines, and the
//! synthetic benchmarks used to compare them.

// Guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod cli;
pub mod error;
pub mod fld;
pub mod parallel;
pub mod samplers;
pub mod schedule;
pub mod scores;
pub mod sho;
pub mod state;
pub mod svg;

pub use error::{Error, Result};
