//! Keyboard dose-finding designs.
//!
//! The crate covers the whole pipeline for single-agent and two-agent
//! combination phase I trials:
//!
//! - [`beta`]: incomplete-beta numerics behind every posterior probability
//! - [`keys`]: key partitions, strongest-key decisions and decision tables
//! - [`scenario`]: random partially ordered toxicity matrices
//! - [`isotonic`]: weighted isotonic regression under the matrix order
//! - [`trial`]: the combination trial state machine and MTD selection
//! - [`sim`]: Monte Carlo operating characteristics and result export
//!
//! A single-agent trial is a combination trial with one row.

// `!(x > 0.0)` is used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beta;
pub mod error;
pub mod grid;
pub mod isotonic;
pub mod keys;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod trial;

pub use beta::DoseData;
pub use error::{KeyboardError, Result};
pub use grid::{DoseCoord, Grid};
pub use keys::{Decision, DecisionTable, KeyPartition};
pub use trial::{Algorithm, Design, TrialConfig, TrialState, TrialStatus};
