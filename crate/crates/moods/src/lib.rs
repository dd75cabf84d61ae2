//! Multi-objective data sampling for imbalanced binary classification.
//!
//! The crate trains a fixed feed-forward scorer on candidate training sets and
//! searches over samples of an imbalanced dataset: majority points are drawn
//! incrementally under adaptive weights, minority points are topped up with
//! SVM-SMOTE synthetics, and a candidate is kept only when both the average
//! and the minority validation F1 improve strictly. Sampling quality is scored
//! with a non-overlapping diversification metric on the scorer's 1-D outputs.
//!
//! Modules:
//! - [`dataset`]: CSV ingestion, stratified splits, train-fitted standardization
//! - [`model`]: the scalar-output network, its loss, and the Adam inner loop
//! - [`oversample`]: SMOTE, an SMO-based soft-margin SVM, and SVM-SMOTE
//! - [`metrics`]: F1 family, minority overlap, variance-order increase
//! - [`moods`]: the accept/reject outer loop over training samples
//! - [`harness`]: multi-seed experiments, baselines, and figure-data export

pub mod dataset;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod moods;
pub mod oversample;
pub mod synth;
pub(crate) mod util;

pub use dataset::{DataSplit, Dataset, LabeledPoint};
pub use metrics::{ConfusionCounts, DiversificationReport, F1Report};
pub use model::{Architecture, ModelState, TrainConfig};
pub use moods::{MoodsConfig, MoodsRun, SamplerState, StepRecord};
pub use oversample::SmoteConfig;
