//! Reference first-order methods: a power method for `lambda_max(A^T A)`,
//! FISTA with backtracking for `l1` least squares (the constrained
//! application's initializer), and the proximal DC algorithm with
//! extrapolation (pDCAe) for the regularized application.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::ibpdca::{subgrad_p2_norm, DcProblem, InvariantLog, IterRecord, SolveReport, SolveStatus, Termination};
use crate::prox::soft_threshold_into;
use crate::reg::RegProblem;

/// Power iteration on `A^T A` until the relative Rayleigh residual
/// `||A^T A v - rho v|| / rho` drops below `tol`. The estimate is inflated
/// by `1 + 10 tol` so it can be used as a step-size bound.
pub fn power_method_lmax(a: &DMatrix<f64>, tol: f64, max_it: usize) -> Result<f64> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!("power method tolerance {tol} not in (0, 1)")));
    }
    ensure_finite(a.as_slice(), "A")?;
    let n = a.ncols();
    if n == 0 || a.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidParameter("power method needs a nonzero matrix".into()));
    }
    // fixed-seed start vector: deterministic, and almost surely not
    // orthogonal to the top eigenvector
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5eed);
    let mut v = DVector::from_fn(n, |_, _| {
        let u = rand_core::RngCore::next_u64(&mut rng);
        (u >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    v /= v.norm();
    for _ in 0..max_it {
        let av = a * &v;
        let w = a.tr_mul(&av);
        let rho = v.dot(&w);
        if rho <= 0.0 {
            return Err(Error::InvalidParameter("power method hit the null space of A".into()));
        }
        let residual = (&w - &v * rho).norm() / rho;
        if residual <= tol {
            return Ok(rho * (1.0 + 10.0 * tol));
        }
        v = &w / w.norm();
    }
    Err(Error::NoConvergence(max_it))
}

#[derive(Debug, Clone)]
pub struct FistaResult {
    pub x: DVector<f64>,
    /// Final backtracking estimate of the gradient Lipschitz constant.
    pub lipschitz: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
}

fn l1ls_objective(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, x: &DVector<f64>) -> f64 {
    0.5 * (a * x - b).norm_squared() + lambda * x.lp_norm(1)
}

/// `iters` steps of FISTA with backtracking on
/// `min lambda ||x||_1 + 1/2 ||A x - b||^2` from `x = 0`.
///
/// The initial estimate is `L_0 = max_j ||a_j||^2 <= lambda_max(A^T A)` and
/// is doubled until the quadratic upper bound holds, so the final estimate
/// never exceeds `2 lambda_max(A^T A)`.
pub fn fista_l1ls(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, iters: usize) -> Result<FistaResult> {
    ensure_dim(b.len(), a.nrows(), "b")?;
    ensure_finite(b.as_slice(), "b")?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    let n = a.ncols();
    let mut lip = a
        .column_iter()
        .map(|c| c.norm_squared())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut x = DVector::zeros(n);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut x_next = DVector::zeros(n);
    let initial_objective = l1ls_objective(a, b, lambda, &x);
    for _ in 0..iters {
        let grad = a.tr_mul(&(a * &y - b));
        loop {
            let trial = &y - &grad / lip;
            soft_threshold_into(&trial, lambda / lip, &mut x_next);
            // for a quadratic f the sufficient-decrease test
            // f(x) <= f(y) + <grad f(y), x - y> + L/2 ||x - y||^2
            // is exactly ||A (x - y)||^2 <= L ||x - y||^2
            let diff = &x_next - &y;
            if (a * &diff).norm_squared() <= lip * diff.norm_squared() || !lip.is_finite() {
                break;
            }
            lip *= 2.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        std::mem::swap(&mut x, &mut x_next);
        t = t_next;
    }
    let final_objective = l1ls_objective(a, b, lambda, &x);
    Ok(FistaResult {
        x,
        lipschitz: lip,
        initial_objective,
        final_objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restart {
    Fixed { period: usize },
    Adaptive,
    Both { period: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdcaeParams {
    /// Upper bound on `lambda_max(A^T A)`; estimated by the power method when absent.
    pub l_a: Option<f64>,
    pub restart: Restart,
    /// When false, `beta_k = 0` and the method is the plain proximal DC algorithm.
    pub extrapolate: bool,
    pub max_iter: usize,
    pub tol_x: f64,
    pub tol_f: f64,
    pub consecutive_required: usize,
}

impl PdcaeParams {
    pub fn standard(max_iter: usize) -> Self {
        Self {
            l_a: None,
            restart: Restart::Both { period: 200 },
            extrapolate: true,
            max_iter,
            tol_x: 1e-7,
            tol_f: 1e-10,
            consecutive_required: 3,
        }
    }
}

/// pDCAe on the regularized problem, split as
/// `1/2 ||A x - b||^2 + lambda ||x||_1 - lambda ||x||`:
///
/// ```text
/// y^k     = x^k + beta_k (x^k - x^{k-1})
/// x^{k+1} = soft_threshold(y^k - (A^T(A y^k - b) - xi^k) / L_A, lambda / L_A)
/// ```
///
/// `beta_k = (theta_k - 1) / theta_{k+1}` follows the FISTA sequence, reset
/// to `theta = 1` every `period` iterations and/or whenever
/// `<y^{k-1} - x^k, x^k - x^{k-1}> > 0`.
pub fn pdcae_solve(p: &RegProblem, params: &PdcaeParams, x0: &DVector<f64>) -> Result<SolveReport> {
    let a = p.a();
    let b = p.b();
    let lambda = p.lambda();
    ensure_dim(x0.len(), a.ncols(), "x0")?;
    ensure_finite(x0.as_slice(), "x0")?;
    if params.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be positive".into()));
    }
    let start = Instant::now();
    let l_a = match params.l_a {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => return Err(Error::InvalidParameter(format!("L_A must be > 0, got {l}"))),
        None => power_method_lmax(a, 1e-8, 100_000)?,
    };
    let period = match params.restart {
        Restart::Fixed { period } | Restart::Both { period } => Some(period.max(1)),
        Restart::Adaptive => None,
    };
    let adaptive = matches!(params.restart, Restart::Adaptive | Restart::Both { .. });

    let n = a.ncols();
    let mut x = x0.clone();
    let mut x_prev = x0.clone();
    let mut y_prev: Option<DVector<f64>> = None;
    let mut f = p.objective(&x);
    let f0 = f;
    let mut theta = 1.0f64;
    let mut since_restart = 0usize;
    let mut term = Termination::new(params.tol_x, params.tol_f, params.consecutive_required);
    let mut trajectory = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut x_next = DVector::zeros(n);
    let mut ax = a * &x;
    let mut ax_prev = ax.clone();

    for k in 0..params.max_iter {
        if adaptive {
            if let Some(yp) = &y_prev {
                if (yp - &x).dot(&(&x - &x_prev)) > 0.0 {
                    theta = 1.0;
                    since_restart = 0;
                }
            }
        }
        if period.is_some_and(|per| since_restart >= per) {
            theta = 1.0;
            since_restart = 0;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = if params.extrapolate { (theta - 1.0) / theta_next } else { 0.0 };
        theta = theta_next;
        since_restart += 1;

        let y = &x + (&x - &x_prev) * beta;
        // A y by linearity, so each iteration needs only A^T r and A x^{k+1}
        let ay = &ax + (&ax - &ax_prev) * beta;
        let xi = subgrad_p2_norm(&x, lambda);
        let grad = a.tr_mul(&(ay - b)) - &xi;
        soft_threshold_into(&(&y - grad / l_a), lambda / l_a, &mut x_next);
        let ax_next = a * &x_next;
        let f_next = 0.5 * (&ax_next - b).norm_squared() + lambda * (x_next.lp_norm(1) - x_next.norm());
        if !f_next.is_finite() {
            return Err(Error::NonFiniteObjective(k + 1));
        }
        let d_fwd = 0.5 * (&x_next - &x).norm_squared();
        trajectory.push(IterRecord {
            k,
            gamma: l_a,
            objective: f_next,
            feas: 0.0,
            d_fwd,
            d_bwd: d_fwd,
            sc_lhs: 0.0,
            sc_rhs: 0.0,
            delta_norm: 0.0,
            delta_scalar: 0.0,
            inner_iters: 0,
            cert_constructions: 0,
            floor_accepted: false,
            unit_step: None,
            stationarity: None,
            elapsed: start.elapsed().as_secs_f64(),
        });
        let stop = term.update(&x_next, &x, f_next, f);
        y_prev = Some(y);
        x_prev = std::mem::replace(&mut x, x_next.clone());
        ax_prev = std::mem::replace(&mut ax, ax_next);
        f = f_next;
        if let Some(s) = stop {
            status = s;
            break;
        }
    }
    Ok(SolveReport {
        method: "pdcae".into(),
        status,
        x_final: x,
        initial_objective: f0,
        final_objective: f,
        final_feas: 0.0,
        outer_iters: trajectory.len(),
        inner_iters: 0,
        cert_constructions: 0,
        wall_time: start.elapsed().as_secs_f64(),
        trajectory,
        invariants: InvariantLog::default(),
    })
}
