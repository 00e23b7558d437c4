// NaN-rejecting guards are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bspline;
pub mod decoupling;
pub mod error;
pub mod experiments;
pub mod io;
pub mod solvers;
pub mod sysgen;
pub mod tensor3;

pub use error::{Error, Result};
