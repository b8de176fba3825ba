//! Readmission risk pipeline for shelter client records.
//!
//! The crate links raw demographic, exit and incident files into one profile
//! per individual, encodes the predictors, and evaluates a logistic-regression
//! baseline and a gradient-boosted classifier under a SMOTE oversampling sweep.
//!
//! ```text
//! raw CSVs --cohort::unify--> ClientProfile --features::encode--> EncodedDataset
//!     --resample::smote--> models::{fit_logistic, fit_gbm} --eval--> SweepReport
//! ```
//!
//! `synthgen` produces calibrated synthetic cohorts so the whole chain can be
//! exercised without access to private client data.

pub mod cli;
pub mod cohort;
pub mod eval;
pub mod features;
pub mod models;
pub mod resample;
pub mod seed;
pub mod synthgen;

pub use cohort::{ClientKey, ClientProfile, IdCombo, ResidenceEpisode};
pub use eval::{ConfusionMatrix, RocCurve, SweepReport};
pub use features::{EncodedDataset, FeatureSchema};
pub use models::{GbmModel, LogisticModel, TrainConfig};
pub use resample::{SmoteConfig, SmoteRatio};
pub use synthgen::CohortSpec;

/// Version tag embedded in every emitted artifact.
pub const TOOL_VERSION: &str = concat!("readmit ", env!("CARGO_PKG_VERSION"));
