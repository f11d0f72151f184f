// SPDX-License-Identifier: Apache-2.0

//! Feature extraction per telemetry mode, detectors and evaluation metrics.

mod detect;
mod features;
mod linear;
mod metrics;

pub use detect::{
    cross_val_scores, default_mask, diag_lift_detector, is_positive, read_external_scores,
    train_detectors, Baselines, DetectionOutcome, DetectorKind, FittedDetector, LabelIndex,
    LIFT_THRESHOLD,
};
pub(crate) use features::fmt_num;
pub use features::{
    extract_pm_features, extract_postcard_features, extract_sketch_features, ExactFlows, Feature,
    FeatureVector, FlowCounts,
};
pub use linear::{blocked_folds, LogisticModel};
pub use metrics::{
    average_precision, best_f1, f1_at, pareto_flags, summarize_ttfd, time_to_detect, TtfdSummary,
};
