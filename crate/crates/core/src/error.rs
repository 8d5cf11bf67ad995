use thiserror::Error;

use crate::ibpdca::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column {0} of A is identically zero")]
    ZeroColumn(usize),

    #[error("A A^T is not positive definite (A lacks full row rank)")]
    RankDeficient,

    #[error("A^+ b vanishes, so the box bound M is degenerate")]
    DegenerateBound,

    #[error("Cholesky factorization of the Newton matrix failed")]
    FactorizationFailed,

    #[error("search direction is not a descent direction (<grad, d> = {0:e})")]
    NotDescent(f64),

    #[error("Armijo line search exhausted after {0} backtracking steps")]
    LineSearchExhausted(usize),

    #[error("subproblem solver stalled at outer iteration {outer_iter} after {inner_iters} inner iterations")]
    SubsolverStalled {
        outer_iter: usize,
        inner_iters: usize,
        partial: Option<Box<SolveReport>>,
    },

    #[error("objective became non-finite at outer iteration {0}")]
    NonFiniteObjective(usize),

    #[error("retracted point violates the constraints by {0:e}")]
    InfeasibleCertificate(f64),

    #[error("power method did not converge in {0} iterations")]
    NoConvergence(usize),

    #[error("no input reports were supplied")]
    EmptyInput,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error("unsupported instance format version {0} (expected 1)")]
    Version(u64),

    #[error("instance file checksum mismatch (truncated or corrupted)")]
    Checksum,

    #[error("CSV parse error in {file} at row {row}, column {col}: {msg}")]
    Csv {
        file: String,
        row: usize,
        col: usize,
        msg: String,
    },
}

pub(crate) fn ensure_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_dim(len: usize, expected: usize, what: &'static str) -> Result<()> {
    if len == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found: len,
        })
    }
}
