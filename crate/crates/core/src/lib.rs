//! Optimization curves of gradient descent and gradient flow on smooth
//! convex functions.
//!
//! The crate runs constant step-size gradient descent, its continuous-time
//! limit (gradient flow) and the Euler curve linking the two, and certifies
//! properties of the resulting curves `n ↦ f(xₙ)` and `t ↦ f(x(t))`:
//! monotone decrease, convexity and monotone gradient norms.
//!
//! ```
//! use optcurve::{analysis, descent, zoo};
//!
//! let f = zoo::huber_counterexample();
//! let traj = descent::gd_run(&f, &[-1.8], 1.9, 10).unwrap();
//! let report = analysis::analyze_trajectory(&traj, analysis::DEFAULT_TOL);
//! assert!(report.monotone_decreasing);
//! assert!(!report.convex);
//! ```
//!
//! A longer guide lives in the `book/` directory of the repository; its code
//! samples are compiled as doc-tests of this crate.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops read better for the small dense matrices in `zoo`
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod descent;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod zoo;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
