//! Multi-objective evolutionary search over ensembles of pretrained
//! classifiers.
//!
//! Candidates are trees of classifiers, early-exit chains and mergers
//! (bagging and SAMME-weighted boosting). Every candidate is scored from cached
//! per-model predictions on three minimized objectives: classification error,
//! expected latency per 128-sample batch, and parameter count.

pub mod enumerate;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod moo;
pub mod pool;
pub mod report;
pub mod search;

pub use error::{Error, Result};
pub use evaluator::{EvalContext, Evaluator, Objective, ObjectiveSet, ObjectiveVector, SizeMode};
pub use graph::{EnsembleGraph, MergeProtocol, Node, StructuralHash};
pub use moo::{Fitness, ParetoArchive};
pub use pool::{ModelPool, Split};
pub use search::{EarnConfig, Search};

