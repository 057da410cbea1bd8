//! Positive-unlabeled learning by post-processing the predictions of a
//! non-traditional classifier (NTC).
//!
//! Given a clean positive sample and an unlabeled positive/negative mixture,
//! the pipeline in [`estimators::dedpul`] estimates both the identifiable
//! mixing proportion `α*` and the per-instance posterior probability that an
//! unlabeled row is positive:
//!
//! 1. train an NTC to separate positive from unlabeled rows and collect
//!    out-of-fold predictions ([`ntc`]);
//! 2. estimate the densities of those predictions on the logit scale
//!    ([`density`]);
//! 3. form the density-ratio curve over the unlabeled predictions and smooth
//!    it ([`ratio`]);
//! 4. estimate `α*` with an EM fixed-point iteration, falling back to the
//!    maximal second difference of the prior/posterior gap curve when EM
//!    collapses to zero ([`estimators`]).
//!
//! [`synth`] provides Laplace mixtures with analytic ground truth and
//! [`eval`] scores estimates against it.

pub mod data;
pub mod density;
pub mod estimators;
pub mod eval;
pub mod ntc;
pub mod quad;
pub mod ratio;
pub mod stats;
pub mod synth;

pub use data::{FoldAssignment, PuDataset, PuLabel, Truth};
pub use density::{DensityKind, DensityModel, DensitySettings};
pub use estimators::{
    dedpul, dedpul_from_predictions, run_method, Branch, DCurve, DedpulConfig, EstimateResult,
    Method, MethodEstimate, PipelineError,
};
pub use eval::{ClassificationScores, RepeatScores, ScoreReport};
pub use ntc::{NtcConfig, NtcKind, NtcModel, NtcPredictions};
pub use ratio::RatioCurve;
pub use synth::{Laplace, MixtureSpec, OracleTruth};
