//! SVM training, feature selection, committees and cross-validation.

pub mod committee;
pub mod cv;
pub mod impute;
pub mod select;
pub mod svm;

pub use committee::{train_committee, Aggregation, Committee, CommitteeConfig, Selection};
pub use cv::{
    cross_validate, derive_seed, kfold_split, shuffled_control, ControlResult, CvResult, FoldArtifact,
    FoldAssignment, Grouping, Prediction,
};
pub use impute::Imputer;
pub use select::greedy_forward_select;
pub use svm::{fit_svm, train_svm, DualSolution, Kernel, Standardization, SvmModel, SvmParams};
