//! Synthetic benchmarks: data generation, pixel metrics and suites.

pub mod metrics;
pub mod suite;
pub mod synth;

pub use metrics::{compute_metrics, edge_pixels, false_positives_within, MetricSet};
pub use suite::{
    detect_direct, detect_patch, evaluate_image, reconstruction_stats, run_suite, summarize, ImageResult,
    MetricSummary, ReconstructionStats, SuiteReport,
};
pub use synth::{generate, AnomalyShape, AnomalySpec, Background, GroundTruth, SynthSpec};
