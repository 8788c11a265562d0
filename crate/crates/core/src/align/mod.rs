//! Training orchestration, alignment search, dangling detection and the
//! two evaluation protocols.

mod expand;
mod infer;
mod metrics;
mod train;

pub use expand::{iterative_expand, mutual_nearest};
pub use infer::{
    calibrate_threshold, evaluate, infer, similarity_matrix, DirectionEval, EvalResult,
    InferConfig, ScoreTables, SimilarityReport, SourceRanking,
};
pub use metrics::{evaluate_consolidated, evaluate_relaxed, Prf, RelaxedMetrics};
pub use train::{train, EpochRecord, TrainOutcome, TrainPlan, TurnRecord};
