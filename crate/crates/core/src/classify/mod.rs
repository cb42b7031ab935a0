//! One-vs-all linear SVM classification and cross-validated evaluation.

mod evaluate;
mod ova;
mod svm;

pub use evaluate::{
    evaluate_cv, evaluate_matrix_cv, AccuracyReport, AccuracyTable, ConfusionMatrix, CvOutcome, TableRow,
};
pub use ova::{argmax_lowest, train_one_vs_all, OneVsAllModel};
pub use svm::{train_linear_svm, LinearSvm, SvmParams, DEFAULT_C};
