//! Uncertainty-aware random forests and probabilistic mix selection for
//! performance-based concrete specification.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`dataset`] loads mix records, derives ratio features and computes
//!    correlation maps.
//! 2. [`forest`] fits bootstrap-aggregated CART regressors whose tree spread
//!    is used as a prediction uncertainty.
//! 3. [`models`] stacks forests into a two-layer model in which the predicted
//!    means and uncertainties of every property feed a second forest, and
//!    scores architectures with leave-one-out cross-validation.
//! 4. [`designer`] proportions a family of hypothetical mixes over a
//!    water/cement grid and picks the one most likely to meet every target.
//!
//! [`properties`] holds the analytic calculators (carbonation kinetics,
//! embodied carbon and cost) used both as features' ground truth and as
//! oracles.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod designer;
pub mod error;
pub mod forest;
pub mod models;
pub mod plot;
pub mod properties;
pub mod stats;

pub use dataset::{
    CementType, CorrelationMatrix, CorrelationMethod, DatasetTable, FeatureVector, Measured,
    MixComposition, MixRecord, TargetId,
};
pub use designer::{
    Bound, BoundDirection, DesignResult, GeneratorParams, ProbabilityMode, ScanReport,
    TargetCriteria,
};
pub use error::{Error, Result};
pub use forest::{ForestModel, Hyperparameters, PredictionWithUncertainty, RegressionTree};
pub use models::{CrossValReport, LinearModel, ModelKind, TwoLayerModel};
pub use properties::{CarbonationFit, CarbonationObservation, MaterialCoefficients};
