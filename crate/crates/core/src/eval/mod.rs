//! Image similarity, classifier metrics and the comparison harness.

pub mod harness;
pub mod metrics;

pub use harness::{
    emit_panels, generate_images, run_comparison, sim_image, ComparisonReport, ComparisonRow, HarnessConfig,
    PairScore, PublishedReference, SimilarityReport, SOURCE_DIFFUSION, SOURCE_REAL, SOURCE_SIM, SOURCE_SIM_AUG,
    SOURCE_SIM_FINETUNE,
};
pub use metrics::{classifier_metrics, mse, ssim, ClassifierMetrics};
