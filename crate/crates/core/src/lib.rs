//! Closed-form transformer weights that reproduce Gaussian Nadaraya–Watson
//! regression on a prompt, together with the reference estimators and an
//! experiment harness for kernel-regression rates on embedded manifolds.
//!
//! * [`manifold`] — sampling, geodesics, Hölder targets and prompts.
//! * [`kernel`] — the direct estimator and its Monte-Carlo integral form.
//! * [`transformer`] — the generic forward pass.
//! * [`construction`] — the weight compiler.
//! * [`experiments`] — equivalence, bias, variance, rate and ambient-dimension
//!   studies.
//! * [`cli`] — the command-line front end.

pub mod error;
pub mod kernel;
pub mod manifold;
pub mod seed;
pub mod sparse;
pub mod transformer;
pub mod construction;
pub mod experiments;
pub mod cli;

pub use error::{Error, Result};
