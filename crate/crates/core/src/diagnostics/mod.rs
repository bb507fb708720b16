//! Measurements on networks: unit census, preactivation statistics, norms,
//! empirical NTK structure, feature SVD and sharpness.

mod census;
mod entk;
pub mod linalg;
mod sharpness;
mod stats;
mod svd;

use serde::Serialize;

pub use census::{
    census_from_trace, gradient_alignment_census, probe_mode, unit_census, AlignmentCensus, LayerCensus, LinearizationProbe,
    UnitCensus, UnitStatus,
};
pub use entk::{
    diag_rank1_residual, entk_gram, jacobian, rank_bound_check, ENTKReport, RankBound, MAX_ENTK_BATCH, RANK_THRESHOLD,
};
pub use sharpness::{sharpness_top_eig, SharpnessOptions, SharpnessReport};
pub use stats::{param_norms, preactivation_stats, predictive_entropy, Drift, LayerPreactStats, ParamNorms, PreactStats};
pub use svd::{feature_matrix_svd, feature_svd, srank, SVDReport, SRANK_DELTA};

/// Bundle of the heavy diagnostics for one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub census: UnitCensus,
    pub preact: PreactStats,
    pub norms: ParamNorms,
    pub entk: Option<ENTKReport>,
    pub svd: Option<SVDReport>,
    pub sharpness: Option<SharpnessReport>,
}
