//! Sleep staging from cardio-respiratory waveforms and video motion.
//!
//! The crate is organised as a pipeline of independent stages:
//!
//! * [`signal`] derives the 10 Hz heart and 5 Hz breathing waveforms and
//!   provides the DSP primitives used along the way.
//! * [`autodiff`], [`model`] and [`train`] implement the patch-encoder
//!   transformer, its reverse-mode gradients and the training loop.
//! * [`tiling`] applies the fixed-length model to whole nights.
//! * [`motion`] builds the per-epoch optical-flow motion feature bank.
//! * [`forest`] is the random-forest classifier used for transfer, and
//!   [`transfer`] assembles its inputs.
//! * [`metrics`] holds stage vocabularies, confusion matrices and Cohen's kappa.
//! * [`synth`], [`render`], [`config`] and [`pipeline`] are the glue used by
//!   the command-line tool.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod pipeline;
pub mod render;
pub mod scalar;
pub mod signal;
pub mod synth;
pub mod tiling;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Length of one scoring epoch in seconds.
pub const EPOCH_SECONDS: f64 = 30.0;
