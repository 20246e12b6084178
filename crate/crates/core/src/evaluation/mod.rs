//! NDCG metrics, significance testing and evaluation reports.

mod metrics;
mod run;
mod significance;

pub use metrics::{
    evaluate_run, load_report, ndcg_at_k, save_report, MetricReport, QueryMetrics, RankedList,
    ScoredDoc,
};
pub use run::{
    bucket_by_query_length, compare_reports, learning_curve, learning_curve_csv, load_run,
    ranked_lists, save_run, score_split, Comparison, CurvePoint, RunEntry,
};
pub use significance::{paired_t_test, TTest, SIGNIFICANCE_LEVEL};

/// Tie-breaking shuffles averaged per query.
pub const DEFAULT_SHUFFLES: usize = 10;
