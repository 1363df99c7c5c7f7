//! Graph-aware ellipsoidal conformal prediction for graph time series.
//!
//! Residuals of any point forecaster are diffused over the graph with the
//! first-order filter `H = (1 - tau) I + tau D^-1 A`, scored by squared
//! Mahalanobis distance, and turned into sequential ellipsoidal prediction
//! regions whose radius is the predicted `(1 - alpha)` quantile of the next
//! score. The graph-agnostic variant (`H = I`) is available for comparison.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod models;
pub mod quantile;
pub mod region;
pub mod scoring;

pub use data::{GraphTimeSeriesDataset, SplitConfig, SyntheticSpec};
pub use error::{Error, Result};
pub use graph::{GraphFilter, GraphTopology, ShrinkageCheck, SpectralSummary};
pub use harness::{EvaluationReport, ExperimentConfig, ModeSelection};
pub use models::{BootstrapEnsemble, PredictionTrace, PredictorKind, PredictorSpec};
pub use quantile::{ForestConfig, QuantileKind, QuantilePredictor, ScoreSeries};
pub use region::{EllipsoidRegion, VolumeStats};
pub use scoring::{FilteredResidualModel, NonconformityScore, ResidualBuffer, ResidualMode, ScoreConvention};
