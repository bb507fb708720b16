//! Optimizers, regularizers and reset interventions.

mod optimizer;
mod regularize;
mod reset;

pub use optimizer::{reset_optimizer_state, Algorithm, OptimizerConfig, OptimizerState};
pub use regularize::{apply_l2, feature_norm_penalty, RegularizerConfig};
pub use reset::{redo_reset, rescale_weights_to_init, unit_activity, RescaleReport, ResetPolicy, UnitActivity};
