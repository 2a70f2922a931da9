//! End-to-end runs over a run directory: ingest, describe, train, predict, evaluate.

pub mod context;
pub mod infer;
pub mod models;
pub mod train;

pub use context::TextContext;
pub use infer::{evaluate, predict, EvalSummary, Prediction, Predictor, RankedCandidate};
pub use models::{checkpoint_path, metrics_path, RerankStage, Stage1};
pub use train::{describe, ingest, train_stage, DescribeScope, DescribeSummary, EpochRow, IngestSummary, StageOutcome};
