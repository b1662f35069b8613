//! Six-class reaching-movement EEG decoder.
//!
//! The crate covers the full offline pipeline:
//!
//! - [`synthgen`] — seeded synthetic six-class reaching-EEG sessions
//!   (ERD/ERS band-power signatures on a 64-channel montage at 1000 Hz).
//! - [`dsp`] — Butterworth/notch IIR design and zero-phase filtering,
//!   decimation with anti-alias filtering.
//! - [`dataset`] — binary `EEGD` container, epoching, channel selection,
//!   stratified train/test splitting.
//! - [`tensorize`] — mapping the 20 motor-strip channels onto a 3×7 scalp
//!   grid so trials become (rows × cols × time) inputs.
//! - [`autodiff`] — a minimal N-dimensional tensor engine with
//!   reverse-mode differentiation (3D convolution, pooling, dense,
//!   softmax cross-entropy, Adam).
//! - [`model`] — the 3D inception CNN plus the simple 3D CNN and shallow
//!   CNN comparators, training and checkpointing.
//! - [`baselines`] — FBCSP (filter bank + common spatial patterns +
//!   softmax regression) and a random forest on band log-variance.
//! - [`eval`] — accuracy, confusion matrices, one-vs-rest ROC/AUC,
//!   paired permutation tests, and SVG report rendering.
//! - [`cli`] — plain-text run configuration and the subcommand drivers
//!   behind the `eegdec` binary.

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod seed;
pub mod synthgen;
pub mod tensorize;

pub use error::{Error, Result};
