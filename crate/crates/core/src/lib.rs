//! Acoustic COVID-19 screening pipeline.
//!
//! The crate covers the full life cycle of a respiratory-sound screening
//! system at desk scale:
//!
//! - [`audio`] — decoding (WAV/FLAC), resampling to 44.1 kHz, peak
//!   normalization and activity trimming
//! - [`features`] — 192-row log-mel + delta + delta-delta feature matrices
//! - [`model`] — a two-layer BiLSTM classifier with exact analytic
//!   gradients (full BPTT), no autodiff framework involved
//! - [`training`] — class-balanced chunk sampling, Adam with L2,
//!   plateau learning-rate scheduling, fold-wise training
//! - [`inference`] — file scoring, fold ensembling, category fusion and
//!   submission pooling
//! - [`metrics`] — threshold-swept ROC, trapezoidal AUC, sensitivity at
//!   95% specificity
//! - [`dataset`] — manifests, stratified subject-level folds, and a
//!   synthetic corpus generator for end-to-end testing
//! - [`portal`] — a ticketed submission-scoring service with a
//!   replayable journal and leaderboard
//!
//! Everything is deterministic given explicit seeds; training and
//! inference are single-threaded by design so repeated runs are
//! bit-identical.

pub mod audio;
pub mod dataset;
pub mod features;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod portal;
pub mod training;

pub use audio::AudioClip;
pub use features::FeatureMatrix;
pub use inference::ScoreRecord;
pub use metrics::{EvalResult, RocCurve};
pub use model::NetworkParams;
