//! Relaxation methods for mathematical programs with switching constraints.

// `!(v >= 0.0)` style checks reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod homotopy;
pub mod linalg;
pub mod ncp;
pub mod nlp;
pub mod problem;
pub mod relax;
pub mod stationarity;

pub use error::{Error, Result};
pub use problem::{evaluate, EvalRecord, KnownSolution, MpscProblem};
pub use relax::{build_relaxed, KdbMode, NlpProblem, SchemeKind};
pub use stationarity::{Multipliers, StationarityCertificate, StationarityKind};
