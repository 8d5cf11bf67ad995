//! `l1 - mu l2` minimization under a noise-level constraint:
//!
//! ```text
//! min_x  ||x||_1 - mu ||x||   s.t.  ||A x - b|| <= kappa,  ||x||_inf <= M
//! ```
//!
//! with `P1 = ||.||_1 + indicator(box) + indicator(||A . - b|| <= kappa)`,
//! `P2 = mu ||.||` and the kernel `phi(x) = 1/2 ||x||^2 + 1/2 ||A x||^2`,
//! which turns the subproblem's data term into a separable one in the dual.
//!
//! The dual is only convex, so its Newton matrices get an adaptive
//! regularization. The primal recovery `w` may violate the ball
//! constraint; it is pulled back toward the strictly feasible point
//! `x_feas = A^+ b` (retraction) before an error certificate
//! `(w~, Delta, delta1 + delta2)` is assembled from `epsilon`-subgradients.

use std::cell::Cell;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::baselines::fista_l1ls;
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::ibpdca::{
    Criterion, DcProblem, ErrorCertificate, SubproblemOutcome, SubproblemRequest, SubproblemSolver,
};
use crate::kernel::{BregmanKernel, GramKernel};
use crate::prox::{ball_jacobian_unchecked, clarke_mask_box_l1_unchecked, prox_box_l1_scalar};
use crate::ssn::{self, DualModel, DualPoint, GramOperator, SsnParams};

/// Constraint violations up to this size are tolerated in certificates.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// `A^+ = A^T (A A^T)^{-1}` through a cached Cholesky factor of `A A^T`.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    a: Arc<DMatrix<f64>>,
    chol: Cholesky<f64, Dyn>,
}

impl PseudoInverse {
    pub fn new(a: Arc<DMatrix<f64>>) -> Result<Self> {
        ensure_finite(a.as_slice(), "A")?;
        let gram = &*a * a.transpose();
        let scale = gram.diagonal().max();
        let chol = Cholesky::new(gram).ok_or(Error::RankDeficient)?;
        // a pivot at round-off level means A A^T is numerically singular
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
        if !(scale > 0.0) || min_pivot <= 1e-13 * scale {
            return Err(Error::RankDeficient);
        }
        Ok(Self { a, chol })
    }

    pub fn apply(&self, b: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(&self.chol.solve(b))
    }
}

/// `A^T (A A^T)^{-1} b`.
pub fn pseudo_inverse_apply(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_dim(b.len(), a.nrows(), "b")?;
    ensure_finite(b.as_slice(), "b")?;
    Ok(PseudoInverse::new(Arc::new(a.clone()))?.apply(b))
}

fn box_bound(mu: f64, x_ls: &DVector<f64>) -> Result<f64> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::InvalidParameter(format!("mu must lie in [0, 1), got {mu}")));
    }
    if x_ls.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateBound);
    }
    Ok((x_ls.lp_norm(1) - mu * x_ls.norm()) / (1.0 - mu))
}

/// `M = (||A^+ b||_1 - mu ||A^+ b||) / (1 - mu)`, which bounds the feasible
/// region's level set without cutting off a minimizer.
pub fn compute_m(mu: f64, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    box_bound(mu, &pseudo_inverse_apply(a, b)?)
}

/// `kappa = nf * ||0.01 n||` for an instance built with noise `0.01 n`.
pub fn noise_kappa(noise: &DVector<f64>, nf: f64) -> f64 {
    nf * 0.01 * noise.norm()
}

#[derive(Debug, Clone)]
pub struct ConProblem {
    a: Arc<DMatrix<f64>>,
    b: DVector<f64>,
    mu: f64,
    kappa: f64,
    bound: f64,
    x_feas: DVector<f64>,
    /// `A x_feas - b`.
    r_feas: DVector<f64>,
    kernel: GramKernel,
}

impl ConProblem {
    pub fn new(a: Arc<DMatrix<f64>>, b: DVector<f64>, mu: f64, kappa: f64) -> Result<Self> {
        ensure_dim(b.len(), a.nrows(), "b")?;
        ensure_finite(b.as_slice(), "b")?;
        let pinv = PseudoInverse::new(Arc::clone(&a))?;
        let x_feas = pinv.apply(&b);
        let bound = box_bound(mu, &x_feas)?;
        let r_feas = &*a * &x_feas - &b;
        let bnorm = b.norm();
        if !(kappa.is_finite() && kappa > 0.0 && kappa < bnorm) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in (0, ||b|| = {bnorm}), got {kappa}"
            )));
        }
        if r_feas.norm() >= kappa {
            return Err(Error::InvalidParameter(format!(
                "A^+ b is not strictly feasible: residual {} >= kappa {kappa}",
                r_feas.norm()
            )));
        }
        let kernel = GramKernel::new(Arc::clone(&a));
        Ok(Self {
            a,
            b,
            mu,
            kappa,
            bound,
            x_feas,
            r_feas,
            kernel,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// The box bound `M`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn x_feas(&self) -> &DVector<f64> {
        &self.x_feas
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    fn violation(&self, x: &DVector<f64>) -> f64 {
        let ball = (&*self.a * x - &self.b).norm() - self.kappa;
        let boxv = x.amax() - self.bound;
        ball.max(boxv).max(0.0)
    }
}

/// `(||x||_1 - mu ||x||, max(||A x - b|| - kappa, ||x||_inf - M, 0))`.
pub fn objective_con(p: &ConProblem, x: &DVector<f64>) -> Result<(f64, f64)> {
    ensure_dim(x.len(), p.a.ncols(), "x")?;
    ensure_finite(x.as_slice(), "x")?;
    Ok((p.objective(x), p.violation(x)))
}

impl DcProblem for ConProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        x.lp_norm(1) - self.mu * x.norm()
    }

    fn kernel(&self) -> &dyn BregmanKernel {
        &self.kernel
    }

    fn concave_weight(&self) -> f64 {
        self.mu
    }

    fn feasibility_violation(&self, x: &DVector<f64>) -> f64 {
        self.violation(x)
    }
}

/// Pulls `w` (with cached `A w`) back into the ball along the segment to
/// `x_feas`. Returns `(w~, A w~ - b, rho)`.
fn retract_cached(p: &ConProblem, w: &DVector<f64>, aw: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
    let r_w = aw - &p.b;
    let nw = r_w.norm();
    if nw <= p.kappa {
        return (w.clone(), r_w, 1.0);
    }
    let nf = p.r_feas.norm();
    let rho = (p.kappa - nf) / (nw - nf);
    let wt = w * rho + &p.x_feas * (1.0 - rho);
    let rt = r_w * rho + &p.r_feas * (1.0 - rho);
    (wt, rt, rho)
}

/// Retraction `w~ = rho w + (1 - rho) x_feas` with
/// `rho = (kappa - ||A x_feas - b||) / (||A w - b|| - ||A x_feas - b||)`
/// when `w` violates the ball constraint, `rho = 1` otherwise.
pub fn retract(p: &ConProblem, w: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    ensure_dim(w.len(), p.a.ncols(), "w")?;
    ensure_finite(w.as_slice(), "w")?;
    let aw = &*p.a * w;
    let (wt, _, rho) = retract_cached(p, w, &aw);
    Ok((wt, rho))
}

/// Dual of the subproblem at `(x^k, xi^k, gamma_k)`, in the variables
/// `s = x^k + xi/gamma` and `b^k = A x^k - b`.
pub struct ConDual<'a> {
    p: &'a ConProblem,
    gamma: f64,
    s: DVector<f64>,
    bk: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ConPoint {
    pub z: DVector<f64>,
    pub atz: DVector<f64>,
    /// `u = s - A^T z / gamma`.
    pub u: DVector<f64>,
    /// `w = prox_{g/gamma}(u)` with `g = ||.||_1 + indicator(box)`.
    pub w: DVector<f64>,
    pub aw: DVector<f64>,
    /// `q = b^k + z / gamma`.
    pub q: DVector<f64>,
    pub proj_q: DVector<f64>,
    pub value: f64,
    /// `e = -A w + Pi(q) + b`.
    pub grad: DVector<f64>,
}

impl DualPoint for ConPoint {
    fn z(&self) -> &DVector<f64> {
        &self.z
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn gradient(&self) -> &DVector<f64> {
        &self.grad
    }
}

pub struct ConRay {
    d: DVector<f64>,
    atd: DVector<f64>,
}

fn ball_excess_sq(q_norm: f64, kappa: f64) -> f64 {
    let e = (q_norm - kappa).max(0.0);
    e * e
}

impl<'a> ConDual<'a> {
    pub fn new(p: &'a ConProblem, x_k: &DVector<f64>, xi: &DVector<f64>, gamma: f64) -> Result<Self> {
        let n = p.a.ncols();
        ensure_dim(x_k.len(), n, "x^k")?;
        ensure_dim(xi.len(), n, "xi")?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self {
            p,
            gamma,
            s: x_k + xi / gamma,
            bk: &*p.a * x_k - &p.b,
        })
    }

    fn point_from(&self, z: DVector<f64>, atz: DVector<f64>) -> ConPoint {
        let (g, bound) = (self.gamma, self.p.bound);
        let u = &self.s - &atz / g;
        let w = u.map(|x| prox_box_l1_scalar(x, 1.0 / g, bound));
        let aw = &*self.p.a * &w;
        let q = &self.bk + &z / g;
        let proj_q = crate::prox::project_l2_ball_unchecked(&q, self.p.kappa);
        let grad = &proj_q - &aw + &self.p.b;
        let value = self.value_parts(&z, &atz, &u, &w, &q);
        ConPoint {
            z,
            atz,
            u,
            w,
            aw,
            q,
            proj_q,
            value,
            grad,
        }
    }

    /// `Psi` with the differences `gamma/2 (||u||^2 - ||s||^2)` and
    /// `gamma/2 (||q||^2 - ||b^k||^2)` expanded to avoid cancellation.
    fn value_parts(
        &self,
        z: &DVector<f64>,
        atz: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
        q: &DVector<f64>,
    ) -> f64 {
        let g = self.gamma;
        let mut primal = 0.0;
        for i in 0..u.len() {
            let d = w[i] - u[i];
            primal += -0.5 * atz[i] * (u[i] + self.s[i]) - w[i].abs() - 0.5 * g * d * d;
        }
        let dual = z.dot(&self.p.b) + 0.5 * z.dot(&(q + &self.bk))
            - 0.5 * g * ball_excess_sq(q.norm(), self.p.kappa);
        primal + dual
    }

    /// `Psi(z)` written term by term as the eight-term dual formula.
    pub fn value_literal(&self, z: &DVector<f64>) -> f64 {
        let g = self.gamma;
        let u = &self.s - self.p.a.tr_mul(z) / g;
        let w = u.map(|x| prox_box_l1_scalar(x, 1.0 / g, self.p.bound));
        let q = &self.bk + z / g;
        let proj = crate::prox::project_l2_ball_unchecked(&q, self.p.kappa);
        z.dot(&self.p.b) + 0.5 * g * u.norm_squared() - w.lp_norm(1) - 0.5 * g * (&w - &u).norm_squared()
            + 0.5 * g * q.norm_squared()
            - 0.5 * g * (&proj - &q).norm_squared()
            - 0.5 * g * self.s.norm_squared()
            - 0.5 * g * self.bk.norm_squared()
    }
}

impl DualModel for ConDual<'_> {
    type Point = ConPoint;
    type Ray = ConRay;
    type Jacobian = GramOperator;

    fn dim(&self) -> usize {
        self.p.a.nrows()
    }

    fn needs_regularization(&self) -> bool {
        true
    }

    fn evaluate(&self, z: DVector<f64>) -> ConPoint {
        let atz = self.p.a.tr_mul(&z);
        self.point_from(z, atz)
    }

    /// `gamma^{-1} (A_J A_J^T + B)` with `J` from the box-l1 prox mask at `u`
    /// and `B` a Jacobian element of the ball projection at `q`.
    fn jacobian(&self, point: &ConPoint) -> GramOperator {
        let inv = 1.0 / self.gamma;
        let mask = clarke_mask_box_l1_unchecked(&point.u, inv, self.p.bound);
        GramOperator {
            identity: 0.0,
            scale: inv,
            active: GramOperator::gather(&self.p.a, &mask.active()),
            ball: Some((ball_jacobian_unchecked(&point.q, self.p.kappa), inv)),
        }
    }

    fn ray(&self, _point: &ConPoint, d: &DVector<f64>) -> ConRay {
        ConRay {
            d: d.clone(),
            atd: self.p.a.tr_mul(d),
        }
    }

    fn value_on_ray(&self, point: &ConPoint, ray: &ConRay, alpha: f64) -> f64 {
        let g = self.gamma;
        let (t, bound) = (1.0 / g, self.p.bound);
        let step = alpha / g;
        let mut primal = 0.0;
        for i in 0..point.u.len() {
            let atz = point.atz[i] + alpha * ray.atd[i];
            let u = point.u[i] - step * ray.atd[i];
            let w = prox_box_l1_scalar(u, t, bound);
            let d = w - u;
            primal += -0.5 * atz * (u + self.s[i]) - w.abs() - 0.5 * g * d * d;
        }
        let z = &point.z + &ray.d * alpha;
        let q = &point.q + &ray.d * step;
        let dual = z.dot(&self.p.b) + 0.5 * z.dot(&(&q + &self.bk))
            - 0.5 * g * ball_excess_sq(q.norm(), self.p.kappa);
        primal + dual
    }

    fn advance(&self, point: &ConPoint, ray: &ConRay, alpha: f64) -> ConPoint {
        let z = &point.z + &ray.d * alpha;
        let atz = &point.atz + &ray.atd * alpha;
        self.point_from(z, atz)
    }
}

fn validate_z(p: &ConProblem, z: &DVector<f64>) -> Result<()> {
    ensure_dim(z.len(), p.a.nrows(), "z")?;
    ensure_finite(z.as_slice(), "z")
}

pub fn dual_value_con(
    p: &ConProblem,
    x_k: &DVector<f64>,
    xi: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
) -> Result<f64> {
    validate_z(p, z)?;
    Ok(ConDual::new(p, x_k, xi, gamma)?.value_literal(z))
}

/// `grad Psi(z) = -A prox_{g/gamma}(s - A^T z / gamma) + Pi_kappa(b^k + z / gamma) + b`.
pub fn dual_grad_con(
    p: &ConProblem,
    x_k: &DVector<f64>,
    xi: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    validate_z(p, z)?;
    Ok(ConDual::new(p, x_k, xi, gamma)?.evaluate(z.clone()).grad)
}

pub fn con_jacobian_element(
    p: &ConProblem,
    x_k: &DVector<f64>,
    xi: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
) -> Result<GramOperator> {
    validate_z(p, z)?;
    let model = ConDual::new(p, x_k, xi, gamma)?;
    let point = model.evaluate(z.clone());
    Ok(model.jacobian(&point))
}

/// Pieces of the certificate built from one dual iterate.
#[derive(Debug, Clone)]
pub struct ConCertificateParts {
    pub w: DVector<f64>,
    pub w_tilde: DVector<f64>,
    pub rho: f64,
    /// `A w~ - b`.
    pub residual: DVector<f64>,
    pub delta: DVector<f64>,
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
    pub delta1: f64,
    pub delta2: f64,
}

fn certificate_parts(p: &ConProblem, gamma: f64, point: &ConPoint) -> Result<ConCertificateParts> {
    let (wt, rt, rho) = retract_cached(p, &point.w, &point.aw);
    let violation = (rt.norm() - p.kappa).max(wt.amax() - p.bound);
    if violation > FEASIBILITY_TOL {
        return Err(Error::InfeasibleCertificate(violation));
    }
    // w~ - w = (1 - rho)(x_feas - w), A(w~ - w) = (1 - rho)(A x_feas - A w)
    let diff = &wt - &point.w;
    let a_diff = (&p.r_feas + &p.b - &point.aw) * (1.0 - rho);
    let delta = (p.a.tr_mul(&(&a_diff - &point.grad)) + &diff) * gamma;
    let d1 = (&point.u - &point.w) * gamma;
    let raw1 = wt.lp_norm(1) - point.w.lp_norm(1) - d1.dot(&diff);
    let scale1 = wt.lp_norm(1) + point.w.lp_norm(1) + d1.dot(&diff).abs();
    if raw1 < -1e-12 * scale1.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "convexity violated in certificate: delta1 = {raw1:e}"
        )));
    }
    let delta1 = raw1.max(0.0);
    let d2 = (&point.q - &point.proj_q) * gamma;
    let delta2 = (&point.grad - &a_diff).dot(&d2).abs();
    Ok(ConCertificateParts {
        w: point.w.clone(),
        w_tilde: wt,
        rho,
        residual: rt,
        delta,
        d1,
        d2,
        delta1,
        delta2,
    })
}

/// Certificate parts at the dual point `z`.
pub fn con_certificate(
    p: &ConProblem,
    x_k: &DVector<f64>,
    xi: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
) -> Result<ConCertificateParts> {
    validate_z(p, z)?;
    let model = ConDual::new(p, x_k, xi, gamma)?;
    certificate_parts(p, gamma, &model.evaluate(z.clone()))
}

/// `D(x, y) = 1/2 ||x - y||^2 + 1/2 ||A (x - y)||^2` from `x - y` and `A (x - y)`.
fn gram_distance(dx: &DVector<f64>, adx: &DVector<f64>) -> f64 {
    0.5 * (dx.norm_squared() + adx.norm_squared())
}

/// One inexact subproblem solve from `z_warm`.
///
/// Under SC2 the retraction and certificate are skipped until
/// `||grad Psi|| <= eps_k`, where `eps_k` is the SC2 right-hand side (fixed
/// for the whole subproblem).
pub fn con_subsolve(
    p: &ConProblem,
    request: &SubproblemRequest<'_>,
    z_warm: &DVector<f64>,
    params: &SsnParams,
) -> Result<(SubproblemOutcome, DVector<f64>)> {
    let gamma = request.gamma;
    let model = ConDual::new(p, request.x_k, request.xi, gamma)?;
    let floor = ssn::DUAL_FLOOR_RTOL * p.b.norm().max(1.0);
    let axk = &model.bk + &p.b;
    let sc2_rhs = match (request.criterion, request.x_prev) {
        (Criterion::Sc2, Some(prev)) => {
            let dx = request.x_k - prev;
            let adx = &*p.a * &dx;
            Some(request.sigma * gamma * gram_distance(&dx, &adx))
        }
        _ => None,
    };
    let constructions = Cell::new(0usize);
    let outcome = ssn::ssn_solve(
        &model,
        z_warm.clone(),
        |point, state| {
            let at_floor = state.at_floor(floor);
            if let Some(eps) = sc2_rhs {
                if state.grad_norm > eps && !at_floor {
                    return Ok(None);
                }
            }
            constructions.set(constructions.get() + 1);
            let parts = certificate_parts(p, gamma, point)?;
            let step = &parts.w_tilde - request.x_k;
            let a_step = &parts.residual + &p.b - &axk;
            let rhs = sc2_rhs.unwrap_or_else(|| request.sigma * gamma * gram_distance(&step, &a_step));
            let delta_scalar = parts.delta1 + parts.delta2;
            let lhs = parts.delta.norm_squared() + parts.delta.dot(&step).abs() + delta_scalar;
            let mut ok = lhs <= rhs;
            if ok && request.strict_summable {
                ok = parts.delta.norm() <= rhs;
            }
            let floor_accepted = !ok && at_floor;
            if !(ok || floor_accepted) {
                return Ok(None);
            }
            Ok(Some(ErrorCertificate {
                x_next: parts.w_tilde,
                delta_vec: parts.delta,
                delta_scalar,
                lhs,
                rhs,
                criterion: request.criterion,
                floor_accepted,
            }))
        },
        params,
    )
    .map_err(|e| match e {
        Error::SubsolverStalled { inner_iters, .. } => Error::SubsolverStalled {
            outer_iter: request.outer_iter,
            inner_iters,
            partial: None,
        },
        other => other,
    })?;
    let z_out = outcome.point.z.clone();
    Ok((
        SubproblemOutcome {
            certificate: outcome.payload,
            inner_iters: outcome.newton_steps,
            cert_constructions: constructions.get(),
            final_unit_step: outcome.last_alpha.map(|a| a == 1.0),
        },
        z_out,
    ))
}

pub struct ConSubsolver<'a> {
    problem: &'a ConProblem,
    params: SsnParams,
    z: DVector<f64>,
}

impl<'a> ConSubsolver<'a> {
    pub fn new(problem: &'a ConProblem, params: SsnParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            problem,
            params,
            z: DVector::zeros(problem.rows()),
        })
    }
}

impl SubproblemSolver for ConSubsolver<'_> {
    fn solve(&mut self, request: &SubproblemRequest<'_>) -> Result<SubproblemOutcome> {
        let (outcome, z) = con_subsolve(self.problem, request, &self.z, &self.params)?;
        self.z = z;
        Ok(outcome)
    }
}

/// Feasible starting point: `iters` FISTA steps on
/// `min lambda0 ||x||_1 + 1/2 ||A x - b||^2` with
/// `lambda0 = 0.01 ||A^T b||_inf`, clamped to the box and retracted.
pub fn con_initial_point(p: &ConProblem, iters: usize) -> Result<DVector<f64>> {
    let lambda0 = 0.01 * p.a.tr_mul(&p.b).amax();
    let fista = fista_l1ls(&p.a, &p.b, lambda0, iters)?;
    let clamped = fista.x.map(|v| v.clamp(-p.bound, p.bound));
    let (x0, _) = retract(p, &clamped)?;
    Ok(x0)
}
