//! Mean and higher-central-moment multicalibration over families of
//! overlapping subgroups, with marginal prediction intervals derived from
//! the calibrated moments.
//!
//! The crate trains a joint mean predictor and central-moment predictors so
//! that, on every group-and-prediction-bucket cell with enough mass, the
//! predicted mean and moments match the true conditional quantities up to
//! mass-scaled slack. Calibrated moments then plug into polynomial tail
//! bounds to produce prediction intervals that are simultaneously valid, on
//! average, over every sufficiently large cell.
//!
//! Three training modes share one update-log predictor representation:
//!
//! - [`exact`] trains against a fully known finite-support distribution;
//! - [`sample`] trains from fresh sample blocks with empirical audits;
//! - [`oracle`] replaces per-group enumeration with calls to an agnostic
//!   learning oracle over a hypothesis class containing the family.
//!
//! [`intervals`] and [`cover`] turn calibrated bundles into per-point
//! prediction intervals and multi-moment interval covers; [`eval`] holds the
//! ground-truth and held-out calibration and coverage audits plus synthetic
//! data generators used throughout the test suites.

pub mod auditor;
pub mod bucket;
pub mod bundle;
pub mod cells;
pub mod cli;
pub mod cover;
pub mod data;
pub mod error;
pub mod eval;
pub mod exact;
pub mod intervals;
pub mod io;
pub mod moments;
pub mod oracle;
pub mod predicate;
pub mod sample;
pub mod synth;
pub mod trace;

pub use bucket::{bucket_index, project_unit};
pub use bundle::{
    CellKey, GroupSel, MomentConstraint, MomentKind, Prediction, PredictorBundle, SetDescriptor,
    UpdateRecord, UpdateTarget,
};
pub use data::{FeatureVector, FiniteDistribution, LabeledExample, SampleBlock, SupportPoint};
pub use error::{Error, Result};
pub use moments::{conditional_moments, mixture_moment, true_mean_and_moments, MixtureComponent};
pub use predicate::{GroupFamily, NamedGroup, Predicate};
