//! Grouped cross-validation, metrics and report files.

pub mod cv;
pub mod folds;
pub mod metrics;
pub mod models;
pub mod report;

pub use cv::{
    run_cv, run_seed, AucMode, CvOptions, ExperimentReport, FoldInput, FoldModel, MeanStd, MetricSummary, RunResult,
    ScoredDatapoint,
};
pub use folds::{stratified_group_kfold, FoldCounts, FoldPlan};
pub use metrics::{decide, roc_auc, sensitivity_specificity, Metric, Metrics};
pub use models::{vtnet_name, ConstantModel, GnbModel, LogRegModel, OracleModel, VtnetModel};
pub use report::{emit_report, load_report, render_svg, summary_csv, PER_RUN_HEADER, SUMMARY_HEADER};
