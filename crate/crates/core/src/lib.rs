//! Data valuation and data selection with Shapley values and semivalues.
//!
//! The crate is organised around set functions over a small player set:
//!
//! - [`subsets`]: fixed-width coalitions, enumeration and seeded sampling.
//! - [`games`]: utility representations (dense tables, modular, commander,
//!   kernel-threshold, ML-backed oracles) and the heterogeneous-quality games.
//! - [`values`]: exact Shapley and semivalues, the inverse-Pascal check and the
//!   permutation-sampling estimator.
//! - [`adversary`]: utility pairs with identical values but opposite
//!   orderings, and the hypothesis-test metrics built on them.
//! - [`mtm`]: monotonically transformed modular functions and their fitting.
//! - [`consistency`]: the rho-consistency index, exact and sampled.
//! - [`selection`]: top-k selection, brute-force optima and random baselines.
//! - [`mlcore`]: small deterministic learners used as utility oracles.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod consistency;
pub mod error;
pub mod games;
pub mod mlcore;
pub mod mtm;
pub mod selection;
pub mod subsets;
pub mod values;

pub use error::{Error, Result};
pub use games::UtilityFn;
pub use subsets::{RngSeed, Subset};
pub use values::ValueVector;
