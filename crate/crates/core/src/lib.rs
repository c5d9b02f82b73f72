// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod document;
pub mod em;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod residuals;
pub mod rounding;
pub mod sim;
pub mod special;
pub mod spline;
pub mod transform;

pub use error::{Result, StarError};
