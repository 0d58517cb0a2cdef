//! Exemplar-free generalized class-incremental learning for sound source
//! localization.
//!
//! The pipeline turns simulated four-microphone frames into GCC-PHAT
//! features ([`signal`]), balances long-tailed tasks by moving correlation
//! peaks of abundant classes onto tail-class statistics ([`augment`]),
//! trains a three-layer MLP once on the first task and freezes it
//! ([`backbone`]), and fits the 360-bin DoA classifier in closed form from
//! per-class correlation statistics that persist across tasks ([`adir`]).
//! [`harness`] builds the task sequence and computes MAE / ACC / BWT.

pub mod adir;
pub mod augment;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod harness;
pub mod linalg;
pub mod seed;
pub mod signal;

pub use error::{Error, Result};

/// Number of DoA classes (one-degree azimuth bins).
pub const N_BINS: usize = 360;
