//! Physics constrained learning toolkit.
//!
//! Unknown parameters embedded in a discretized PDE are trained by solving
//! the PDE exactly at every optimizer step and extracting the gradient with
//! one transposed linear solve plus one reverse sweep over a small tape. The
//! penalty-method baseline, the discretizations used by the benchmark
//! problems, and the conditioning study live alongside it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod benchmarks;
pub mod conditioning;
pub mod error;
pub mod fd;
pub mod iga;
pub mod jacprop;
pub mod nn;
pub mod optimize;
pub mod pcl;
pub mod penalty;
pub mod sparse;

pub use error::{Error, Result};
pub use sparse::{LuFactors, SparseMatrix};
