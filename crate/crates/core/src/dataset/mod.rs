//! Feature tables, label metadata, task subsets, sampling and folds.

mod features;
mod labels;
mod subset;
pub mod synthetic;

pub use features::{load_feature_table, FeatureKind, FeatureSet, TableFormat};
pub use labels::{load_class_order, load_label_table, LabelRow, LabelTable, Task};
pub use subset::{
    largest_remainder, make_folds, select_task_subset, stratified_ids, stratified_subsample,
    SampleSet, SplitPlan, TaskSubset,
};
pub use synthetic::{generate_synthetic, generate_views, planted_spectrum, SyntheticCorpus, SyntheticSpec};
