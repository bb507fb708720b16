//! A desk-scale laboratory for studying how neural networks lose plasticity
//! under nonstationary training.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense row-major `f64` arrays and the GEMM kernels used everywhere.
//! - [`nn`]: a small network engine with explicit forward/backward passes,
//!   losses and the two-hot codec.
//! - [`optim`]: Adam/SGD, L2, weight rescaling, ReDO and optimizer resets.
//! - [`tasks`]: datasets, nonstationary task streams, regression targets and
//!   the contextual bandit.
//! - [`diagnostics`]: unit census, eNTK structure, feature SVD, sharpness and
//!   the linearized-network rank bound.
//! - [`harness`]: experiment drivers (iterated training, plasticity probes,
//!   bandit DQN, dose-response, task-switch microscope).
//! - [`io`]: config parsing, checkpoints and metric files.
//!
//! Data-parallel loops (per-sample gradients, seed grids, gradcheck cases) go
//! through [`par::Exec`], which falls back to sequential execution when the
//! `parallel` feature is disabled.

pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod nn;
pub mod optim;
pub mod par;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
