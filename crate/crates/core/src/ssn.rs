//! Globalized semi-smooth Newton iteration for `grad Psi(z) = 0`.
//!
//! `Psi` is a convex, continuously differentiable dual objective whose
//! gradient is only semi-smooth. Each iteration selects a generalized
//! Jacobian element `H`, solves `(H + eps_t I) d = -grad` (with
//! `eps_t = tau1 * min(tau2, ||grad||)` when `H` may be singular, zero
//! otherwise), and backtracks along `d` until the Armijo condition holds.
//! Iteration stops as soon as a caller-supplied acceptance predicate returns
//! a payload.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::BallJacobian;

/// Dense Cholesky is used up to this many dual variables; CG beyond.
pub const DENSE_CHOLESKY_MAX_DIM: usize = 4000;

/// Subsolvers may accept a certificate without the criterion holding once
/// `||grad Psi|| <= DUAL_FLOOR_RTOL * max(1, ||b||)` and Newton steps have
/// stopped reducing the gradient (see [`InnerState::at_floor`]).
pub const DUAL_FLOOR_RTOL: f64 = 1e-12;

/// Below the floor, a step that shrinks `||grad Psi||` by less than this
/// factor counts as stagnation.
pub const FLOOR_STAGNATION: f64 = 0.5;

/// Armijo comparisons tolerate this many ulps of `|Psi|` so that steps taken
/// when the predicted decrease is below round-off are not rejected forever.
const ARMIJO_ROUNDOFF_ULPS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverChoice {
    /// Dense Cholesky for `m <= 4000`, Jacobi-preconditioned CG otherwise.
    Auto,
    DenseCholesky,
    ConjugateGradient,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SsnParams {
    /// Armijo slope fraction, in `(0, 1/2)`.
    pub mu_ls: f64,
    /// Backtracking factor, in `(0, 1)`.
    pub delta_ls: f64,
    pub eta_bar: f64,
    /// Forcing exponent: the linear solve targets `min(eta_bar, ||g||^(1 + gamma_exp))`.
    pub gamma_exp: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub max_inner: usize,
    pub max_backtracks: usize,
    pub linear_solver: LinearSolverChoice,
}

impl Default for SsnParams {
    fn default() -> Self {
        Self {
            mu_ls: 1e-4,
            delta_ls: 0.5,
            eta_bar: 1e-3,
            gamma_exp: 0.2,
            tau1: 0.99,
            tau2: 1e-6,
            max_inner: 100,
            max_backtracks: 60,
            linear_solver: LinearSolverChoice::Auto,
        }
    }
}

impl SsnParams {
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if !(self.mu_ls > 0.0 && self.mu_ls < 0.5)
            || !open01(self.delta_ls)
            || !open01(self.eta_bar)
            || !(self.gamma_exp > 0.0 && self.gamma_exp <= 1.0)
            || !open01(self.tau1)
            || !open01(self.tau2)
            || self.max_inner == 0
        {
            return Err(Error::InvalidParameter(format!("invalid SSN parameters: {self:?}")));
        }
        Ok(())
    }

    /// Residual target `min(eta_bar, ||g||^(1 + gamma_exp))` for the Newton system.
    pub fn forcing_tolerance(&self, grad_norm: f64) -> f64 {
        self.eta_bar.min(grad_norm.powf(1.0 + self.gamma_exp))
    }

    /// Regularization `tau1 * min(tau2, ||g||)`.
    pub fn regularization(&self, grad_norm: f64) -> f64 {
        self.tau1 * self.tau2.min(grad_norm)
    }
}

/// Symmetric positive semidefinite Newton matrix, usable matrix-free.
pub trait NewtonOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    fn diagonal(&self) -> DVector<f64>;
    fn to_dense(&self) -> DMatrix<f64>;
}

/// `identity * I + scale * A_J A_J^T + ball_scale * B`, where `A_J` holds the
/// active columns of `A` and `B` is an optional ball-projection Jacobian.
#[derive(Debug, Clone)]
pub struct GramOperator {
    pub identity: f64,
    pub scale: f64,
    pub active: DMatrix<f64>,
    pub ball: Option<(BallJacobian, f64)>,
}

impl GramOperator {
    /// Gathers the columns of `a` flagged by `mask`.
    pub fn gather(a: &DMatrix<f64>, active_idx: &[usize]) -> DMatrix<f64> {
        let m = a.nrows();
        let mut out = DMatrix::zeros(m, active_idx.len());
        for (j, &col) in active_idx.iter().enumerate() {
            out.column_mut(j).copy_from(&a.column(col));
        }
        out
    }
}

impl NewtonOperator for GramOperator {
    fn dim(&self) -> usize {
        self.active.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v * self.identity;
        if self.active.ncols() > 0 {
            let t = self.active.tr_mul(v);
            out.gemv(self.scale, &self.active, &t, 1.0);
        }
        if let Some((ball, s)) = &self.ball {
            out += ball.apply(v) * *s;
        }
        out
    }

    fn diagonal(&self) -> DVector<f64> {
        let m = self.dim();
        let mut d = DVector::from_element(m, self.identity);
        for col in self.active.column_iter() {
            for (di, &a) in d.iter_mut().zip(col.iter()) {
                *di += self.scale * a * a;
            }
        }
        if let Some((ball, s)) = &self.ball {
            d += ball.diagonal() * *s;
        }
        d
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut h = if self.active.ncols() > 0 {
            let at = self.active.transpose();
            let mut g = &self.active * at;
            g *= self.scale;
            g
        } else {
            DMatrix::zeros(m, m)
        };
        for i in 0..m {
            h[(i, i)] += self.identity;
        }
        if let Some((ball, s)) = &self.ball {
            ball.add_to(&mut h, *s);
        }
        h
    }
}

/// An evaluated dual point.
pub trait DualPoint {
    fn z(&self) -> &DVector<f64>;
    fn value(&self) -> f64;
    fn gradient(&self) -> &DVector<f64>;
}

/// A dual objective `Psi` together with a generalized Hessian selection.
///
/// `Ray` caches whatever makes `Psi(z + alpha d)` cheap for many `alpha`
/// (typically `A^T d`).
pub trait DualModel {
    type Point: DualPoint;
    type Ray;
    type Jacobian: NewtonOperator;

    fn dim(&self) -> usize;

    /// True when Jacobian elements may be singular (adaptive regularization).
    fn needs_regularization(&self) -> bool;

    fn evaluate(&self, z: DVector<f64>) -> Self::Point;

    fn jacobian(&self, point: &Self::Point) -> Self::Jacobian;

    fn ray(&self, point: &Self::Point, d: &DVector<f64>) -> Self::Ray;

    fn value_on_ray(&self, point: &Self::Point, ray: &Self::Ray, alpha: f64) -> f64;

    fn advance(&self, point: &Self::Point, ray: &Self::Ray, alpha: f64) -> Self::Point;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Cholesky,
    ConjugateGradient,
}

#[derive(Debug, Clone)]
pub struct NewtonDirection {
    pub d: DVector<f64>,
    /// `||(H + eps I) d + g||`.
    pub residual: f64,
    pub regularization: f64,
    pub method: SolveMethod,
    /// False when CG hit its iteration cap above the forcing tolerance.
    pub converged: bool,
}

/// Jacobi-preconditioned CG for `(H + eps I) d = rhs`; returns the iterate
/// with the smallest residual seen.
pub fn preconditioned_cg(
    op: &dyn NewtonOperator,
    eps: f64,
    rhs: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> (DVector<f64>, f64, bool) {
    let m = rhs.len();
    let precond = op.diagonal().map(|v| 1.0 / (v + eps).max(f64::MIN_POSITIVE));
    let mut x = DVector::zeros(m);
    let mut r = rhs.clone();
    let mut rnorm = r.norm();
    let mut best = (x.clone(), rnorm);
    if rnorm <= tol {
        return (x, rnorm, true);
    }
    let mut zv = r.component_mul(&precond);
    let mut p = zv.clone();
    let mut rz = r.dot(&zv);
    for _ in 0..max_iter.max(1) {
        let q = op.apply(&p) + &p * eps;
        let pq = p.dot(&q);
        if pq <= 0.0 || !pq.is_finite() {
            break;
        }
        let alpha = rz / pq;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        rnorm = r.norm();
        if rnorm < best.1 {
            best = (x.clone(), rnorm);
        }
        if rnorm <= tol {
            return (x, rnorm, true);
        }
        zv = r.component_mul(&precond);
        let rz_next = r.dot(&zv);
        let beta = rz_next / rz;
        rz = rz_next;
        p = &zv + &p * beta;
    }
    let (xb, rb) = best;
    (xb, rb, rb <= tol)
}

fn residual_norm(op: &dyn NewtonOperator, eps: f64, d: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    (op.apply(d) + d * eps + grad).norm()
}

/// Solves the (regularized) Newton system at `point`.
pub fn newton_direction<M: DualModel>(
    model: &M,
    point: &M::Point,
    params: &SsnParams,
) -> Result<NewtonDirection> {
    let jac = model.jacobian(point);
    newton_direction_with(&jac, point.gradient(), model.needs_regularization(), params)
}

/// [`newton_direction`] for an explicit operator and gradient.
pub fn newton_direction_with(
    jac: &dyn NewtonOperator,
    grad: &DVector<f64>,
    regularize: bool,
    params: &SsnParams,
) -> Result<NewtonDirection> {
    let m = grad.len();
    let gnorm = grad.norm();
    let eps = if regularize { params.regularization(gnorm) } else { 0.0 };
    let tol = params.forcing_tolerance(gnorm);
    let use_cholesky = match params.linear_solver {
        LinearSolverChoice::Auto => m <= DENSE_CHOLESKY_MAX_DIM,
        LinearSolverChoice::DenseCholesky => true,
        LinearSolverChoice::ConjugateGradient => false,
    };
    if use_cholesky {
        let mut h = jac.to_dense();
        if eps != 0.0 {
            for i in 0..m {
                h[(i, i)] += eps;
            }
        }
        if let Some(chol) = Cholesky::new(h) {
            let d = chol.solve(&(-grad));
            if d.iter().all(|v| v.is_finite()) {
                let residual = residual_norm(jac, eps, &d, grad);
                return Ok(NewtonDirection {
                    d,
                    residual,
                    regularization: eps,
                    method: SolveMethod::Cholesky,
                    converged: true,
                });
            }
        }
        // factorization failed: fall through to CG
    }
    let (d, residual, converged) = preconditioned_cg(jac, eps, &(-grad), tol, m);
    Ok(NewtonDirection {
        d,
        residual,
        regularization: eps,
        method: SolveMethod::ConjugateGradient,
        converged,
    })
}

/// Result of a successful backtracking line search.
#[derive(Debug)]
pub struct LineSearchStep<R> {
    pub alpha: f64,
    pub value: f64,
    pub backtracks: usize,
    pub ray: R,
}

/// Armijo backtracking: the smallest `i >= 0` with
/// `Psi(z + delta^i d) <= Psi(z) + mu delta^i <grad, d>`.
pub fn armijo_search<M: DualModel>(
    model: &M,
    point: &M::Point,
    d: &DVector<f64>,
    params: &SsnParams,
) -> Result<LineSearchStep<M::Ray>> {
    let slope = point.gradient().dot(d);
    if !(slope < 0.0) {
        return Err(Error::NotDescent(slope));
    }
    let psi = point.value();
    let slack = ARMIJO_ROUNDOFF_ULPS * f64::EPSILON * psi.abs().max(1.0);
    let ray = model.ray(point, d);
    let mut alpha = 1.0;
    for i in 0..=params.max_backtracks {
        let value = model.value_on_ray(point, &ray, alpha);
        if value <= psi + params.mu_ls * alpha * slope + slack {
            return Ok(LineSearchStep {
                alpha,
                value,
                backtracks: i,
                ray,
            });
        }
        alpha *= params.delta_ls;
    }
    Err(Error::LineSearchExhausted(params.max_backtracks))
}

#[derive(Debug, Clone, Copy)]
pub struct InnerState {
    /// Newton steps taken so far.
    pub newton_steps: usize,
    pub grad_norm: f64,
    /// Gradient norm before the last step.
    pub prev_grad_norm: Option<f64>,
}

impl InnerState {
    /// The dual residual is at its attainable floor: zero, or below `floor`
    /// for two consecutive points without halving.
    pub fn at_floor(&self, floor: f64) -> bool {
        self.grad_norm == 0.0
            || (self.grad_norm <= floor
                && self
                    .prev_grad_norm
                    .is_some_and(|p| p <= floor && self.grad_norm > FLOOR_STAGNATION * p))
    }
}

#[derive(Debug)]
pub struct SsnOutcome<P, T> {
    pub point: P,
    pub payload: T,
    pub newton_steps: usize,
    pub last_alpha: Option<f64>,
    /// `Psi` at every visited point, starting with `z0`.
    pub values: Vec<f64>,
}

/// Runs SSN from `z0` until `accept` returns a payload.
///
/// `accept` is consulted at `z0` and after every step. Exceeding
/// `max_inner` Newton steps yields [`Error::SubsolverStalled`] with
/// `outer_iter = 0`; callers substitute their own iteration index.
pub fn ssn_solve<M, T, F>(model: &M, z0: DVector<f64>, mut accept: F, params: &SsnParams) -> Result<SsnOutcome<M::Point, T>>
where
    M: DualModel,
    F: FnMut(&M::Point, InnerState) -> Result<Option<T>>,
{
    if !z0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("SSN starting point"));
    }
    let mut point = model.evaluate(z0);
    let mut values = vec![point.value()];
    let mut last_alpha = None;
    let mut steps = 0;
    let mut prev_grad_norm = None;
    loop {
        let state = InnerState {
            newton_steps: steps,
            grad_norm: point.gradient().norm(),
            prev_grad_norm,
        };
        if let Some(payload) = accept(&point, state)? {
            return Ok(SsnOutcome {
                point,
                payload,
                newton_steps: steps,
                last_alpha,
                values,
            });
        }
        // a stationary point that the caller rejects cannot be improved on
        if steps >= params.max_inner || state.grad_norm == 0.0 {
            return Err(Error::SubsolverStalled {
                outer_iter: 0,
                inner_iters: steps,
                partial: None,
            });
        }
        prev_grad_norm = Some(state.grad_norm);
        let dir = newton_direction(model, &point, params)?;
        let step = armijo_search(model, &point, &dir.d, params)?;
        point = model.advance(&point, &step.ray, step.alpha);
        values.push(point.value());
        last_alpha = Some(step.alpha);
        steps += 1;
    }
}
