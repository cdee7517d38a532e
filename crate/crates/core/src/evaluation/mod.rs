//! BSS-eval metrics, per-track evaluation and model comparison.

mod bss;
mod compare;
mod track;

pub use bss::{bss_decompose, metrics, BssDecomposition, Metrics, CLIP_DB, DEFAULT_FILTER_LEN};
pub use compare::{
    compare_models, parse_results_csv, pearson, summary_table, write_results_csv, Comparison, CorrelationReport,
    Grouping, METRIC_NAMES,
};
pub use track::{evaluate_model, evaluate_track, mixture_baseline, score_estimate, separate_signal, separate_track, EvalResult};
