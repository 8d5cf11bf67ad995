//! The inexact Bregman proximal DC outer loop.
//!
//! A DC program `min P1(x) - P2(x) + f(x)` is driven by repeatedly
//! linearizing `P2` at `x^k` (subgradient `xi^k`) and approximately solving
//!
//! ```text
//! min_x  P1(x) + <grad f(x^k) - xi^k, x - x^k> + gamma_k D(x, x^k)
//! ```
//!
//! The subproblem is delegated to a [`SubproblemSolver`]. It must return an
//! [`ErrorCertificate`] `(x^{k+1}, Delta^k, delta_k)` whose error satisfies
//! one of two relative criteria:
//!
//! ```text
//! SC1:  ||Delta||^2 + |<Delta, x^{k+1} - x^k>| + delta <= sigma gamma_k D(x^{k+1}, x^k)
//! SC2:  ||Delta||^2 + |<Delta, x^{k+1} - x^k>| + delta <= sigma gamma_k D(x^k, x^{k-1})
//! ```
//!
//! Under SC2 the first iteration is verified with SC1, so no `x^{-1}` is
//! needed. Every accepted certificate is re-verified here, and the descent
//! properties the criteria imply are monitored at runtime and logged in
//! [`InvariantLog`].

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::BregmanKernel;

/// Absolute slack used by the runtime invariant monitors.
pub const INVARIANT_SLACK: f64 = 1e-9;

/// Relative tolerance when re-verifying a certificate accepted by a subsolver.
pub const RECHECK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Sc1,
    Sc2,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Sc1 => "sc1",
            Criterion::Sc2 => "sc2",
        })
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sc1" => Ok(Criterion::Sc1),
            "sc2" => Ok(Criterion::Sc2),
            other => Err(Error::InvalidParameter(format!("unknown criterion '{other}'"))),
        }
    }
}

/// Proximal parameter sequence `gamma_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    /// `gamma_k = max(1/sqrt(k+1), floor)`, so `gamma_max = 1`.
    Decaying { floor: f64 },
    Constant { value: f64 },
}

impl GammaSchedule {
    pub fn gamma(&self, k: usize) -> f64 {
        match *self {
            GammaSchedule::Decaying { floor } => (1.0 / ((k + 1) as f64).sqrt()).max(floor),
            GammaSchedule::Constant { value } => value,
        }
    }

    pub fn min(&self) -> f64 {
        match *self {
            GammaSchedule::Decaying { floor } => floor.min(1.0),
            GammaSchedule::Constant { value } => value,
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            GammaSchedule::Decaying { floor } => floor.max(1.0),
            GammaSchedule::Constant { value } => value,
        }
    }
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule::Decaying { floor: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverParams {
    pub gamma: GammaSchedule,
    pub sigma: f64,
    pub criterion: Criterion,
    pub max_outer: usize,
    /// Threshold for `max(rel. step, rel. objective change)`.
    pub tol_x: f64,
    /// Threshold for the relative objective change alone.
    pub tol_f: f64,
    pub consecutive_required: usize,
    /// Smooth-adaptable constant `L` of `(f, phi)`; zero for both sparse applications.
    pub smoothness: f64,
    /// Additionally require `||Delta^k|| <= sigma gamma_k D(ref pair)`.
    pub strict_summable: bool,
}

impl SolverParams {
    /// `sigma = 0.9` for SC1 and `0.09` for SC2 with `gamma_k = max(1/sqrt(k+1), 0.1)`.
    pub fn standard(criterion: Criterion, max_outer: usize) -> Self {
        Self {
            gamma: GammaSchedule::default(),
            sigma: match criterion {
                Criterion::Sc1 => 0.9,
                Criterion::Sc2 => 0.09,
            },
            criterion,
            max_outer,
            tol_x: 1e-7,
            tol_f: 1e-10,
            consecutive_required: 3,
            smoothness: 0.0,
            strict_summable: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (gmin, gmax) = (self.gamma.min(), self.gamma.max());
        let l = self.smoothness;
        if !(gmin.is_finite() && gmax.is_finite()) || gmin <= 0.0 || l < 0.0 || l >= gmin {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= L < gamma_min, got L = {l}, gamma_min = {gmin}"
            )));
        }
        let bound = match self.criterion {
            Criterion::Sc1 => (gmin - l) / gmin,
            Criterion::Sc2 => (gmin - l) / gmax,
        };
        if !(self.sigma >= 0.0 && self.sigma < bound) {
            return Err(Error::InvalidParameter(format!(
                "sigma = {} must lie in [0, {bound}) for {}",
                self.sigma, self.criterion
            )));
        }
        if self.max_outer == 0 || self.consecutive_required == 0 {
            return Err(Error::InvalidParameter(
                "max_outer and consecutive_required must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Error certificate `(x^{k+1}, Delta^k, delta_k)` for one subproblem solve.
#[derive(Debug, Clone)]
pub struct ErrorCertificate {
    pub x_next: DVector<f64>,
    pub delta_vec: DVector<f64>,
    pub delta_scalar: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Criterion the certificate was verified against.
    pub criterion: Criterion,
    /// Accepted because the dual residual reached the numerical floor rather
    /// than through `lhs <= rhs`. Only happens when both sides are at
    /// round-off level (e.g. `sigma = 0`, or `x^k` already solves its own
    /// subproblem).
    pub floor_accepted: bool,
}

/// `P2 = weight * ||.||`; returns `weight * x / ||x||`, or zero at the origin.
pub fn subgrad_p2_norm(x: &DVector<f64>, weight: f64) -> DVector<f64> {
    let norm = x.norm();
    if norm == 0.0 {
        DVector::zeros(x.len())
    } else {
        x * (weight / norm)
    }
}

/// Left and right side of the relative criterion, recomputed from the
/// certificate using the kernel's closed-form distance.
pub fn criterion_sides(
    cert: &ErrorCertificate,
    kernel: &dyn BregmanKernel,
    criterion: Criterion,
    sigma: f64,
    gamma_k: f64,
    x_k: &DVector<f64>,
    x_prev: Option<&DVector<f64>>,
) -> (f64, f64) {
    let step = &cert.x_next - x_k;
    let lhs = cert.delta_vec.norm_squared() + cert.delta_vec.dot(&step).abs() + cert.delta_scalar;
    let gap = match (criterion, x_prev) {
        (Criterion::Sc1, _) => kernel.distance(&cert.x_next, x_k),
        (Criterion::Sc2, Some(prev)) => kernel.distance(x_k, prev),
        (Criterion::Sc2, None) => 0.0,
    };
    (lhs, sigma * gamma_k * gap)
}

/// Whether `cert` satisfies `criterion` at `(x_k, x_prev)`.
pub fn check_criterion(
    cert: &ErrorCertificate,
    kernel: &dyn BregmanKernel,
    criterion: Criterion,
    sigma: f64,
    gamma_k: f64,
    x_k: &DVector<f64>,
    x_prev: Option<&DVector<f64>>,
) -> bool {
    if cert.delta_scalar < 0.0 || !cert.delta_scalar.is_finite() {
        return false;
    }
    let (lhs, rhs) = criterion_sides(cert, kernel, criterion, sigma, gamma_k, x_k, x_prev);
    lhs <= rhs
}

/// The DC problem as seen by the outer loop.
pub trait DcProblem: Send + Sync {
    fn dim(&self) -> usize;

    /// `F = P1 - P2 + f` without indicator terms; constraint violation is
    /// reported by [`DcProblem::feasibility_violation`].
    fn objective(&self, x: &DVector<f64>) -> f64;

    fn kernel(&self) -> &dyn BregmanKernel;

    /// Weight `c` of `P2 = c ||.||`.
    fn concave_weight(&self) -> f64;

    fn subgradient_p2(&self, x: &DVector<f64>) -> DVector<f64> {
        subgrad_p2_norm(x, self.concave_weight())
    }

    /// Constraint violation reported alongside the objective.
    fn feasibility_violation(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
}

/// What the outer loop hands to the subproblem solver at iteration `k`.
#[derive(Debug)]
pub struct SubproblemRequest<'a> {
    pub outer_iter: usize,
    pub x_k: &'a DVector<f64>,
    pub x_prev: Option<&'a DVector<f64>>,
    pub xi: &'a DVector<f64>,
    pub gamma: f64,
    pub sigma: f64,
    /// Effective criterion for this iteration (SC1 during the SC2 bootstrap).
    pub criterion: Criterion,
    pub strict_summable: bool,
}

#[derive(Debug, Clone)]
pub struct SubproblemOutcome {
    pub certificate: ErrorCertificate,
    pub inner_iters: usize,
    /// Number of times a full certificate (retraction, error terms) was built.
    pub cert_constructions: usize,
    /// Whether the last Newton step used the unit step size.
    pub final_unit_step: Option<bool>,
}

pub trait SubproblemSolver {
    fn solve(&mut self, request: &SubproblemRequest<'_>) -> Result<SubproblemOutcome>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    ConvergedRelChange,
    ConvergedObjChange,
    MaxIter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub gamma: f64,
    /// `F(x^{k+1})`.
    pub objective: f64,
    pub feas: f64,
    /// `D(x^{k+1}, x^k)`.
    pub d_fwd: f64,
    /// `D(x^k, x^{k+1})`.
    pub d_bwd: f64,
    pub sc_lhs: f64,
    pub sc_rhs: f64,
    pub delta_norm: f64,
    pub delta_scalar: f64,
    pub inner_iters: usize,
    pub cert_constructions: usize,
    pub floor_accepted: bool,
    pub unit_step: Option<bool>,
    /// Majorant of `dist(0, dF(x^{k+1}))`:
    /// `||Delta^k|| + gamma_k ||grad phi(x^{k+1}) - grad phi(x^k)|| + ||xi^{k+1} - xi^k||`.
    pub stationarity: Option<f64>,
    /// Seconds since the solve started.
    pub elapsed: f64,
}

/// Violations of the descent properties implied by the criteria.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InvariantLog {
    pub descent_checks: usize,
    pub descent_violations: usize,
    pub merit_checks: usize,
    pub merit_violations: usize,
    pub rate_checks: usize,
    pub rate_violations: usize,
    pub certificate_mismatches: usize,
    pub floor_acceptances: usize,
    pub messages: Vec<String>,
}

impl InvariantLog {
    pub fn total_violations(&self) -> usize {
        self.descent_violations + self.merit_violations + self.rate_violations + self.certificate_mismatches
    }

    fn note(&mut self, msg: String) {
        if self.messages.len() < 20 {
            self.messages.push(msg);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub status: SolveStatus,
    #[serde(skip)]
    pub x_final: DVector<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_feas: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub cert_constructions: usize,
    /// Seconds spent in the solver core (initializer excluded).
    pub wall_time: f64,
    pub trajectory: Vec<IterRecord>,
    pub invariants: InvariantLog,
}

impl SolveReport {
    /// Fraction of subproblem solves whose last Newton step was a unit step.
    pub fn unit_step_fraction(&self) -> Option<f64> {
        let flags: Vec<bool> = self.trajectory.iter().filter_map(|r| r.unit_step).collect();
        if flags.is_empty() {
            None
        } else {
            Some(flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
        }
    }
}

/// Tracks the consecutive-iteration termination rule.
#[derive(Debug, Clone)]
pub(crate) struct Termination {
    tol_x: f64,
    tol_f: f64,
    required: usize,
    rel_streak: usize,
    obj_streak: usize,
}

impl Termination {
    pub(crate) fn new(tol_x: f64, tol_f: f64, required: usize) -> Self {
        Self {
            tol_x,
            tol_f,
            required,
            rel_streak: 0,
            obj_streak: 0,
        }
    }

    pub(crate) fn update(
        &mut self,
        x_new: &DVector<f64>,
        x_old: &DVector<f64>,
        f_new: f64,
        f_old: f64,
    ) -> Option<SolveStatus> {
        let rel_x = (x_new - x_old).norm() / (1.0 + x_new.norm());
        let rel_f = (f_new - f_old).abs() / (1.0 + f_new.abs());
        if rel_x.max(rel_f) < self.tol_x {
            self.rel_streak += 1;
        } else {
            self.rel_streak = 0;
        }
        if rel_f < self.tol_f {
            self.obj_streak += 1;
        } else {
            self.obj_streak = 0;
        }
        if self.rel_streak >= self.required {
            Some(SolveStatus::ConvergedRelChange)
        } else if self.obj_streak >= self.required {
            Some(SolveStatus::ConvergedObjChange)
        } else {
            None
        }
    }
}

/// Runs the outer loop from `x0`.
///
/// With `x_minus1 = None` and SC2 selected, iteration 0 is verified with SC1.
pub fn run(
    problem: &dyn DcProblem,
    subsolver: &mut dyn SubproblemSolver,
    params: &SolverParams,
    x0: &DVector<f64>,
    x_minus1: Option<&DVector<f64>>,
) -> Result<SolveReport> {
    params.validate()?;
    crate::error::ensure_dim(x0.len(), problem.dim(), "x0")?;
    crate::error::ensure_finite(x0.as_slice(), "x0")?;

    let kernel = problem.kernel();
    let start = Instant::now();
    let sigma = params.sigma;
    let l = params.smoothness;
    let (gamma_min, gamma_max) = (params.gamma.min(), params.gamma.max());

    let mut x = x0.clone();
    let mut x_prev: Option<DVector<f64>> = x_minus1.cloned();
    let mut f = problem.objective(&x);
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    let f0 = f;
    let mut xi = problem.subgradient_p2(&x);

    // SC2 merit F(x^k) + sigma gamma_max D(x^k, x^{k-1})
    let mut merit = f + match x_minus1 {
        Some(prev) if params.criterion == Criterion::Sc2 => sigma * gamma_max * kernel.distance(x0, prev),
        _ => 0.0,
    };
    let merit0 = merit;
    let sc2_rate_coef = if x_minus1.is_some() {
        gamma_min - l - sigma * gamma_max
    } else {
        (gamma_min - l - sigma * gamma_max).min((1.0 - sigma) * params.gamma.gamma(0) - l - sigma * gamma_max)
    };
    let sc1_rate_coef = (1.0 - sigma) * gamma_min - l;

    let mut term = Termination::new(params.tol_x, params.tol_f, params.consecutive_required);
    let mut log = InvariantLog::default();
    let mut trajectory: Vec<IterRecord> = Vec::new();
    let mut min_d_fwd = f64::INFINITY;
    let mut total_inner = 0usize;
    let mut total_certs = 0usize;
    let mut status = SolveStatus::MaxIter;

    for k in 0..params.max_outer {
        let gamma = params.gamma.gamma(k);
        let effective = match (params.criterion, &x_prev) {
            (Criterion::Sc2, Some(_)) => Criterion::Sc2,
            _ => Criterion::Sc1,
        };
        let request = SubproblemRequest {
            outer_iter: k,
            x_k: &x,
            x_prev: x_prev.as_ref(),
            xi: &xi,
            gamma,
            sigma,
            criterion: effective,
            strict_summable: params.strict_summable,
        };
        let outcome = match subsolver.solve(&request) {
            Ok(o) => o,
            Err(Error::SubsolverStalled { inner_iters, .. }) => {
                let partial = SolveReport {
                    method: String::new(),
                    status: SolveStatus::MaxIter,
                    final_objective: f,
                    final_feas: problem.feasibility_violation(&x),
                    x_final: x,
                    initial_objective: f0,
                    outer_iters: trajectory.len(),
                    inner_iters: total_inner + inner_iters,
                    cert_constructions: total_certs,
                    wall_time: start.elapsed().as_secs_f64(),
                    trajectory,
                    invariants: log,
                };
                return Err(Error::SubsolverStalled {
                    outer_iter: k,
                    inner_iters,
                    partial: Some(Box::new(partial)),
                });
            }
            Err(e) => return Err(e),
        };
        let cert = outcome.certificate;
        total_inner += outcome.inner_iters;
        total_certs += outcome.cert_constructions;

        // independent re-verification of the certificate
        if cert.floor_accepted {
            log.floor_acceptances += 1;
        } else {
            // the subsolver evaluates the same sides from cached products, so
            // allow a few ulps of disagreement
            let (lhs, rhs) = criterion_sides(&cert, kernel, effective, sigma, gamma, &x, x_prev.as_ref());
            let ok = cert.delta_scalar >= 0.0 && lhs <= rhs + RECHECK_RTOL * lhs.max(rhs);
            if !ok || cert.criterion != effective {
                log.certificate_mismatches += 1;
                log.note(format!("k={k}: certificate fails independent {effective} check"));
            }
        }

        let x_next = cert.x_next.clone();
        let f_next = problem.objective(&x_next);
        if !f_next.is_finite() {
            return Err(Error::NonFiniteObjective(k + 1));
        }
        let d_fwd = kernel.distance(&x_next, &x);
        let d_bwd = kernel.distance(&x, &x_next);
        min_d_fwd = min_d_fwd.min(d_fwd);
        let iters_done = k + 1;

        match effective {
            Criterion::Sc1 => {
                log.descent_checks += 1;
                let bound = f - ((1.0 - sigma) * gamma - l) * d_fwd + INVARIANT_SLACK;
                if f_next > bound {
                    log.descent_violations += 1;
                    log.note(format!("k={k}: SC1 descent violated ({f_next:e} > {bound:e})"));
                }
            }
            Criterion::Sc2 => {}
        }
        if params.criterion == Criterion::Sc2 {
            let merit_next = f_next + sigma * gamma_max * d_fwd;
            log.merit_checks += 1;
            if merit_next > merit + INVARIANT_SLACK {
                log.merit_violations += 1;
                log.note(format!("k={k}: SC2 merit increased ({merit_next:e} > {merit:e})"));
            }
            merit = merit_next;
        }
        let (coef, gap) = match params.criterion {
            Criterion::Sc1 => (sc1_rate_coef, f0 - f_next),
            Criterion::Sc2 => (sc2_rate_coef, merit0 - merit),
        };
        if coef > 0.0 {
            log.rate_checks += 1;
            let bound = (gap + INVARIANT_SLACK) / (coef * iters_done as f64);
            if min_d_fwd > bound {
                log.rate_violations += 1;
                log.note(format!("k={k}: rate bound violated ({min_d_fwd:e} > {bound:e})"));
            }
        }

        let xi_next = problem.subgradient_p2(&x_next);
        let grad_gap = gamma * (kernel.gradient(&x_next) - kernel.gradient(&x)).norm();
        let stationarity = cert.delta_vec.norm() + grad_gap + (&xi_next - &xi).norm();
        trajectory.push(IterRecord {
            k,
            gamma,
            objective: f_next,
            feas: problem.feasibility_violation(&x_next),
            d_fwd,
            d_bwd,
            sc_lhs: cert.lhs,
            sc_rhs: cert.rhs,
            delta_norm: cert.delta_vec.norm(),
            delta_scalar: cert.delta_scalar,
            inner_iters: outcome.inner_iters,
            cert_constructions: outcome.cert_constructions,
            floor_accepted: cert.floor_accepted,
            unit_step: outcome.final_unit_step,
            stationarity: Some(stationarity),
            elapsed: start.elapsed().as_secs_f64(),
        });

        let stop = term.update(&x_next, &x, f_next, f);
        x_prev = Some(std::mem::replace(&mut x, x_next));
        f = f_next;
        xi = xi_next;
        if let Some(s) = stop {
            status = s;
            break;
        }
    }

    let final_feas = problem.feasibility_violation(&x);
    Ok(SolveReport {
        method: String::new(),
        status,
        x_final: x,
        initial_objective: f0,
        final_objective: f,
        final_feas,
        outer_iters: trajectory.len(),
        inner_iters: total_inner,
        cert_constructions: total_certs,
        wall_time: start.elapsed().as_secs_f64(),
        trajectory,
        invariants: log,
    })
}
