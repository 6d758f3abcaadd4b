//! Admission control for memory-overloading database queries.
//!
//! Queries arrive as featurized records. A discriminative rule filters the
//! obvious negatives, a per-cluster correction index catches repeats of
//! earlier false negatives, a hybrid global/local boosted-tree classifier
//! scores the rest, and a self-tuning quota gates every positive verdict.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, CLI and
//! anything touching the filesystem live in the `safeload` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod correction;
pub mod error;
mod math;
pub mod model;
pub mod pipeline;
pub mod quota;
pub mod rules;
pub mod schema;
pub mod sim;
pub mod types;
pub mod workload;

pub use error::{Error, Result};
pub use schema::{FeatureGroup, FeatureSchema, FeatureVector};
pub use types::{
    classify_outcome, ConfusionClass, Decision, DecisionSource, Label, Observed, Outcome,
    QueryRecord, Verdict,
};
