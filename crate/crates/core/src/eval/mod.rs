//! Evaluation protocol: dB-domain MAE / RMSE over the communicable region,
//! box statistics over per-map values, the four-way sampling category
//! breakdown, error maps, an IDW reference predictor and report writers.

mod idw;
mod metrics;
pub mod render;
mod report;
mod stats;

pub use idw::{idw_baseline, IdwFlag, IdwPrediction, IDW_POWER};
pub use metrics::{
    category_breakdown, communicable_mask, error_map, error_sums, full_region, mae, rmse, Category,
    CategoryBreakdown, ErrorMap, ErrorSums, COMMUNICABLE_DBM,
};
pub use report::{evaluate_map, CategorySummary, EvalReport, MapEval};
pub use stats::{box_stats, median, quantile, BoxStats, QUANTILE_RULE, WHISKER_FACTOR};
