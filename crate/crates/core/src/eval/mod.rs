//! Online next-attempt evaluation, baselines and hyperparameter search.

mod grid;
mod metrics;
mod online;

pub use grid::{grid_search, Grid, GridPoint, GridResult, VALIDATION_FOLDS};
pub use metrics::{avg_baseline, mean_variance, metrics, AvgBaseline};
pub use online::{
    audit_access_log, evaluate_online, evaluate_split, AccessEvent, AccessKind, AttemptError, EvalConfig, EvalReport,
    FoldMetrics, Method, Prediction, Query, SplitOutcome, SuffixCursor,
};
