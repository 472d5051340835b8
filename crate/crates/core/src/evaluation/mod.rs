//! Classification metrics, explanation fidelity, biological-faithfulness
//! statistics and blob analyses.

pub mod bio;
pub mod blobs;
pub mod fidelity;
pub mod metrics;

use thiserror::Error;

use crate::models::ModelError;

pub use bio::{
    enrichment, log_enrichment, mean_pairwise_distance, sasa_gap, spatial_zscore, tertiary_contact_stats, top_fraction_set, EnrichmentTable,
    SignTest, SpatialZ, TertiaryStats,
    CATALYTIC_SET_NOTE, ENRICHMENT_DELTA,
};
pub use blobs::{
    active_blob_analysis, blob_importance, blob_structure_stats, graph_blobs, hard_assignments, jaccard, jaccard_domains, ActiveBlob,
    ActiveBlobReport, ActiveMode, BlobStat, BlobStats, ProteinBlobs,
};
pub use fidelity::{
    class_stability, fidelity_at, fidelity_at_count, fidelity_suite, keep_top_count, keep_top_edges, sparsity, FidelityRow, SPARSITY_LEVELS,
};
pub use metrics::{
    accuracy, auroc, average_ranks, classification_metrics, fmax, macro_auroc, macro_f1, mcc, spearman, top_fraction_precision,
    top_k_indices, ClassificationMetrics, SpearmanResult,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
