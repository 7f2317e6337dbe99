//! Group-comparison statistics, downstream classification and embedding
//! export.

mod classify;
mod embeddings;
pub mod stats;

pub use classify::{
    confusion_matrix, downstream_classify, probe_accuracy, weighted_metrics, ClassifierConfig,
    ClassifierReport, FoldReport, Metrics, MlpClassifier,
};
pub use embeddings::{embed_records, export_embeddings, write_embeddings, RecordEmbeddings};
pub use stats::{
    adjacent_comparisons, bonferroni_threshold, group_comparison, save_stats_csv, welch_t_test,
    write_stats_csv, RoiTest, StatResult, TTest,
};
