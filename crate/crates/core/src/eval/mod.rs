//! Retrieval evaluation, the ridge baseline, significance tests and the
//! hemodynamic lag scan.

pub mod lag;
pub mod retrieval;
pub mod ridge;
pub mod stats;

pub use lag::{lag_scan, LagResult, LagScan};
pub use retrieval::{
    evaluate_trials, rank_candidates, sample_candidates, sample_trials, topk_accuracy, Accuracy, Direction,
    NegativeMode, PoolItem, Ranking, RetrievalResult, RetrievalTask, Trial,
};
pub use ridge::{fit_ridge_baseline, ridge_fit, window_features, RidgeBaseline, RidgeModel};
pub use stats::{pearson, welch_ttest, TTest};
