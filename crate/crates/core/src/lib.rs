//! Calibrate-then-delegate cascades for safety monitoring.
//!
//! A cheap probe scores every input; a delegation signal decides per input
//! whether an expensive expert should be consulted instead. The delegation
//! threshold is calibrated on held-out data with fixed-sequence binomial
//! testing after Pareto filtering, which bounds the delegation rate by a
//! budget `alpha` with probability at least `1 - delta`.
//!
//! Module map:
//!
//! - [`dataset`]: examples, JSONL I/O, deterministic splitting
//! - [`synth`]: synthetic generator with strong/weak expert presets
//! - [`probes`]: logistic safety probe, ridge delegation-value probe, uncertainty signal
//! - [`delegation`]: threshold and batched top-k policies
//! - [`risk`]: budget risk, accuracy error, AUROC, mean-v-at-k
//! - [`calibration`]: binomial p-values, Pareto filter, fixed-sequence testing
//! - [`harness`]: sweeps, coverage validation, group analysis, reports
//! - [`config`]: flat key-value config files

pub mod calibration;
pub mod config;
pub mod dataset;
pub mod delegation;
pub mod error;
pub mod harness;
pub mod probes;
pub mod risk;
pub mod serde_ext;
pub mod synth;

pub use error::{CtdError, Result};
