//! Differentiable linear-programming layers built on discretized Physarum
//! dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod bench;
pub mod error;
pub mod linalg;
pub mod lp;
pub mod oracles;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
pub use lp::{SolveResult, SolveStatus, SolverConfig, StandardFormLP, TraceRecord, ValidatedLp};
