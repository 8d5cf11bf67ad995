//! Closed-form proximal mappings, projections and Clarke Jacobian selections.
//!
//! Three maps are needed by the two sparse applications:
//!
//! * `soft_threshold`, the proximal map of `nu * ||.||_1`,
//! * `prox_box_l1`, the proximal map of `nu * ||.||_1 + indicator(||.||_inf <= M)`,
//! * `project_l2_ball`, the Euclidean projection onto `{u : ||u|| <= kappa}`.
//!
//! Each map is piecewise smooth, and the SSN subsolvers need one element of
//! its Clarke generalized Jacobian. For the separable maps this is a 0/1
//! diagonal [`DiagMask`]; for the ball projection it is a [`BallJacobian`].
//! At kinks the smallest admissible element is chosen (mask entry 0), and on
//! the sphere `||u|| = kappa` the selection uses `t = 1`, which coincides
//! with the limit from outside the ball.
//!
//! The public functions validate their inputs (finite entries, admissible
//! parameters). The solvers call the unchecked `*_into` variants.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};

#[inline]
pub(crate) fn soft_threshold_scalar(y: f64, nu: f64) -> f64 {
    if y > nu {
        y - nu
    } else if y < -nu {
        y + nu
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn prox_box_l1_scalar(y: f64, nu: f64, bound: f64) -> f64 {
    soft_threshold_scalar(y, nu).clamp(-bound, bound)
}

pub(crate) fn soft_threshold_into(y: &DVector<f64>, nu: f64, out: &mut DVector<f64>) {
    for (o, &v) in out.iter_mut().zip(y.iter()) {
        *o = soft_threshold_scalar(v, nu);
    }
}

pub(crate) fn project_l2_ball_unchecked(u: &DVector<f64>, kappa: f64) -> DVector<f64> {
    let norm = u.norm();
    if norm <= kappa {
        u.clone()
    } else {
        u * (kappa / norm)
    }
}

fn check_nonneg(value: f64, name: &str) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {value}")))
    }
}

fn check_pos(value: f64, name: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {value}")))
    }
}

/// Componentwise `sign(y_i) * max(|y_i| - nu, 0)`.
pub fn soft_threshold(y: &DVector<f64>, nu: f64) -> Result<DVector<f64>> {
    check_nonneg(nu, "nu")?;
    ensure_finite(y.as_slice(), "soft_threshold input")?;
    Ok(y.map(|v| soft_threshold_scalar(v, nu)))
}

/// Soft thresholding followed by a clamp to `[-bound, bound]`.
pub fn prox_box_l1(y: &DVector<f64>, nu: f64, bound: f64) -> Result<DVector<f64>> {
    check_nonneg(nu, "nu")?;
    check_pos(bound, "M")?;
    ensure_finite(y.as_slice(), "prox_box_l1 input")?;
    Ok(y.map(|v| prox_box_l1_scalar(v, nu, bound)))
}

/// Projection onto the closed Euclidean ball of radius `kappa` at the origin.
pub fn project_l2_ball(u: &DVector<f64>, kappa: f64) -> Result<DVector<f64>> {
    check_pos(kappa, "kappa")?;
    ensure_finite(u.as_slice(), "project_l2_ball input")?;
    Ok(project_l2_ball_unchecked(u, kappa))
}

/// Diagonal 0/1 selection from the Clarke Jacobian of a separable prox.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagMask(Vec<bool>);

impl DiagMask {
    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    /// Entries as floats (each exactly 0.0 or 1.0).
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Indices with `d_i = 1`.
    pub fn active(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter().zip(&self.0).map(|(&x, &b)| if b { x } else { 0.0 }),
        )
    }
}

pub(crate) fn clarke_mask_l1_unchecked(v: &DVector<f64>, nu: f64) -> DiagMask {
    DiagMask(v.iter().map(|x| x.abs() > nu).collect())
}

pub(crate) fn clarke_mask_box_l1_unchecked(v: &DVector<f64>, nu: f64, bound: f64) -> DiagMask {
    DiagMask(
        v.iter()
            .map(|&x| x.abs() > nu && soft_threshold_scalar(x, nu).abs() < bound)
            .collect(),
    )
}

/// Jacobian selection for [`soft_threshold`] at `v`.
pub fn clarke_mask_l1(v: &DVector<f64>, nu: f64) -> Result<DiagMask> {
    check_pos(nu, "nu")?;
    ensure_finite(v.as_slice(), "clarke_mask_l1 input")?;
    Ok(clarke_mask_l1_unchecked(v, nu))
}

/// Jacobian selection for [`prox_box_l1`] at `v`.
pub fn clarke_mask_box_l1(v: &DVector<f64>, nu: f64, bound: f64) -> Result<DiagMask> {
    check_pos(nu, "nu")?;
    check_pos(bound, "M")?;
    ensure_finite(v.as_slice(), "clarke_mask_box_l1 input")?;
    Ok(clarke_mask_box_l1_unchecked(v, nu, bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallCase {
    Identity,
    Boundary,
    Exterior,
}

/// An element of the Clarke Jacobian of the ball projection.
///
/// Every case has the form `alpha * I - beta * u u^T`.
#[derive(Debug, Clone)]
pub struct BallJacobian {
    case: BallCase,
    u: DVector<f64>,
    kappa: f64,
}

impl BallJacobian {
    pub fn case(&self) -> BallCase {
        self.case
    }

    pub fn point(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `(alpha, beta)` with `B = alpha * I - beta * u u^T`.
    pub fn coefficients(&self) -> (f64, f64) {
        match self.case {
            BallCase::Identity => (1.0, 0.0),
            BallCase::Boundary => (1.0, 1.0 / (self.kappa * self.kappa)),
            BallCase::Exterior => {
                let norm = self.u.norm();
                let alpha = self.kappa / norm;
                (alpha, alpha / (norm * norm))
            }
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let (alpha, beta) = self.coefficients();
        if beta == 0.0 {
            return v * alpha;
        }
        let proj = self.u.dot(v);
        v * alpha - &self.u * (beta * proj)
    }

    /// Adds `scale * B` to `target`.
    pub fn add_to(&self, target: &mut DMatrix<f64>, scale: f64) {
        let (alpha, beta) = self.coefficients();
        for i in 0..target.nrows() {
            target[(i, i)] += scale * alpha;
        }
        if beta != 0.0 {
            target.ger(-scale * beta, &self.u, &self.u, 1.0);
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let (alpha, beta) = self.coefficients();
        self.u.map(|x| alpha - beta * x * x)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.u.len();
        let mut out = DMatrix::zeros(n, n);
        self.add_to(&mut out, 1.0);
        out
    }
}

pub(crate) fn ball_jacobian_unchecked(u: &DVector<f64>, kappa: f64) -> BallJacobian {
    let norm = u.norm();
    let case = if norm < kappa {
        BallCase::Identity
    } else if norm > kappa {
        BallCase::Exterior
    } else {
        BallCase::Boundary
    };
    BallJacobian {
        case,
        u: u.clone(),
        kappa,
    }
}

/// Jacobian selection for [`project_l2_ball`] at `u`.
pub fn ball_jacobian(u: &DVector<f64>, kappa: f64) -> Result<BallJacobian> {
    check_pos(kappa, "kappa")?;
    ensure_finite(u.as_slice(), "ball_jacobian input")?;
    Ok(ball_jacobian_unchecked(u, kappa))
}
