//! Inexact Bregman proximal difference-of-convex (DC) optimization.
//!
//! The outer loop in [`ibpdca`] linearizes the concave part and solves each
//! Bregman proximal subproblem inexactly, accepting any approximate solution
//! that carries an [`ErrorCertificate`](ibpdca::ErrorCertificate) satisfying
//! a relative error criterion. Two sparse-recovery applications are
//! included: `l1 - l2` regularized least squares ([`reg`]) and the
//! `l1 - mu l2` problem with a noise-level constraint ([`con`]). Both solve
//! their subproblems through the dual with a semi-smooth Newton method
//! ([`ssn`]).

pub mod baselines;
pub mod con;
pub mod data;
pub mod error;
pub mod ibpdca;
pub mod kernel;
pub mod methods;
pub mod prox;
pub mod reg;
pub mod ssn;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
