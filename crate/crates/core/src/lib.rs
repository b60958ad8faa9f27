//! Etiology classification of vertebral compression fractures from
//! longitudinal CT: vertebral body morphometry, bone densitometry, rate
//! features across studies, and an SVM committee evaluated by
//! cross-validation. A phantom generator provides synthetic cohorts with
//! known ground truth.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod densitometry;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod frame;
pub mod learning;
pub mod manifest;
pub mod morphology;
pub mod morphometry;
pub mod phantom;
pub mod volume;

pub use error::{Error, Result};
pub use frame::LocalFrame;
pub use manifest::{Class, CohortManifest, Gender, StudyRecord, Truth};
pub use volume::{Geometry, LabelMap, LabelRole, Volume};
