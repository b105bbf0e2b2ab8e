//! Graph-structured conformal claim filtering.
//!
//! Reasoning traces are modeled as directed acyclic claim graphs in which an
//! edge points from a premise to the claim that depends on it. A retained set
//! of claims is *coherently factual* when every retained claim is true and all
//! of its ancestors are retained and true. This crate implements:
//!
//! - the claim-graph data model and coherence predicate ([`adg`]),
//! - structural per-claim graph features ([`features`]),
//! - a scalar reverse-mode differentiation tape ([`autodiff`]),
//! - the discrete calibration/prediction pipeline with split-conformal
//!   guarantees ([`hard`]),
//! - its differentiable relaxation for end-to-end scorer training ([`soft`]),
//! - the training loop ([`train`]) and the evaluation harness ([`eval`]).
//!
//! The crate is `no_std`-compatible (with `alloc`); disable default features
//! to build without the standard library. File formats, dataset synthesis and
//! the command-line interface live in the companion `cohconf` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod adg;
pub mod autodiff;
pub mod eval;
pub mod features;
pub mod hard;
mod math;
pub mod soft;
#[cfg(test)]
pub(crate) mod testutil;
pub mod train;

pub use adg::{Adg, AdgError, AdgProblem, Claim, ClaimId, FeatureSchema};
pub use hard::{CalibratedThreshold, FilterMode, Orientation, ScorerParams, TauGrid, Threshold};
pub use soft::SoftConfig;
pub use train::TrainConfig;
