//! Simulation and analysis of the facet-forming parabolic flow
//! `u_t = u_xx + (alpha/2)(sgn u_x)_x` on the unit torus.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datum;
pub mod error;
pub mod facets;
pub mod grid;
pub mod harness;
pub mod regularized;
pub mod sharp;
pub mod trajectory;
pub mod tridiag;
pub mod variational;

pub use error::{FlowError, Result};
pub use grid::{Alpha, GridFunction, TorusGrid};
