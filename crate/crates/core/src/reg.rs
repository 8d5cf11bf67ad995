//! `l1 - l2` regularized least squares:
//!
//! ```text
//! min_x  F(x) = 1/2 ||A x - b||^2 + lambda (||x||_1 - ||x||)
//! ```
//!
//! with `P1 = lambda ||.||_1 + 1/2 ||A . - b||^2`, `P2 = lambda ||.||` and the
//! quadratic kernel. Each subproblem
//!
//! ```text
//! min_x  lambda ||x||_1 - <xi, x - x^k> + 1/2 ||A x - b||^2 + gamma/2 ||x - x^k||^2
//! ```
//!
//! is solved through its strongly convex dual in `z` (one entry per row of
//! `A`) by semi-smooth Newton. With `w = prox(v(z))` and `e = grad Psi(z)`,
//! the triple `(w, -A^T e, 0)` is an exact-subdifferential certificate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::ibpdca::{
    Criterion, DcProblem, ErrorCertificate, SubproblemOutcome, SubproblemRequest, SubproblemSolver,
};
use crate::kernel::{BregmanKernel, QuadraticKernel};
use crate::prox::{clarke_mask_l1_unchecked, soft_threshold_into, soft_threshold_scalar};
use crate::ssn::{self, DualModel, DualPoint, GramOperator, SsnParams};

#[derive(Debug, Clone)]
pub struct RegProblem {
    a: Arc<DMatrix<f64>>,
    b: DVector<f64>,
    lambda: f64,
    kernel: QuadraticKernel,
}

impl RegProblem {
    /// Rejects zero columns of `A`, which would make `F` unbounded below
    /// along that coordinate's level set.
    pub fn new(a: Arc<DMatrix<f64>>, b: DVector<f64>, lambda: f64) -> Result<Self> {
        ensure_dim(b.len(), a.nrows(), "b")?;
        ensure_finite(a.as_slice(), "A")?;
        ensure_finite(b.as_slice(), "b")?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        if let Some(j) = (0..a.ncols()).find(|&j| a.column(j).iter().all(|&v| v == 0.0)) {
            return Err(Error::ZeroColumn(j));
        }
        let kernel = QuadraticKernel::new(a.ncols());
        Ok(Self { a, b, lambda, kernel })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_shared(&self) -> Arc<DMatrix<f64>> {
        Arc::clone(&self.a)
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }
}

fn objective_unchecked(p: &RegProblem, x: &DVector<f64>) -> f64 {
    let r = &*p.a * x - &p.b;
    0.5 * r.norm_squared() + p.lambda * (x.lp_norm(1) - x.norm())
}

/// `F(x) = 1/2 ||A x - b||^2 + lambda (||x||_1 - ||x||)`.
pub fn objective_reg(p: &RegProblem, x: &DVector<f64>) -> Result<f64> {
    ensure_dim(x.len(), p.a.ncols(), "x")?;
    ensure_finite(x.as_slice(), "x")?;
    Ok(objective_unchecked(p, x))
}

impl DcProblem for RegProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        objective_unchecked(self, x)
    }

    fn kernel(&self) -> &dyn BregmanKernel {
        &self.kernel
    }

    fn concave_weight(&self) -> f64 {
        self.lambda
    }
}

/// Dual of the subproblem at `(x^k, xi^k, gamma_k)`.
pub struct RegDual<'a> {
    p: &'a RegProblem,
    gamma: f64,
    /// `gamma^{-1} xi + x^k`.
    center: DVector<f64>,
    xk_sq: f64,
}

/// State at one dual iterate.
#[derive(Debug, Clone)]
pub struct RegPoint {
    pub z: DVector<f64>,
    pub atz: DVector<f64>,
    /// `v(z) = gamma^{-1} xi + x^k - gamma^{-1} A^T z`.
    pub v: DVector<f64>,
    /// Primal recovery `w = prox_{lambda/gamma ||.||_1}(v)`.
    pub w: DVector<f64>,
    pub value: f64,
    /// `e = -A w + z + b`.
    pub grad: DVector<f64>,
}

impl DualPoint for RegPoint {
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

pub struct RegRay {
    d: DVector<f64>,
    atd: DVector<f64>,
}

impl<'a> RegDual<'a> {
    pub fn new(p: &'a RegProblem, x_k: &DVector<f64>, xi: &DVector<f64>, gamma: f64) -> Result<Self> {
        let n = p.a.ncols();
        ensure_dim(x_k.len(), n, "x^k")?;
        ensure_dim(xi.len(), n, "xi")?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self {
            p,
            gamma,
            center: xi / gamma + x_k,
            xk_sq: x_k.norm_squared(),
        })
    }

    fn threshold(&self) -> f64 {
        self.p.lambda / self.gamma
    }

    fn v_of(&self, atz: &DVector<f64>) -> DVector<f64> {
        &self.center - atz / self.gamma
    }

    /// `Psi` using `-lambda ||w||_1 - gamma/2 ||w - v||^2 + gamma/2 ||v||^2 = gamma/2 ||w||^2`,
    /// which holds at `w = prox(v)` and avoids cancellation between the last terms.
    fn value_from(&self, z: &DVector<f64>, w_sq: f64) -> f64 {
        0.5 * z.norm_squared() + z.dot(&self.p.b) + 0.5 * self.gamma * (w_sq - self.xk_sq)
    }

    fn point_from(&self, z: DVector<f64>, atz: DVector<f64>) -> RegPoint {
        let v = self.v_of(&atz);
        let mut w = DVector::zeros(v.len());
        soft_threshold_into(&v, self.threshold(), &mut w);
        let value = self.value_from(&z, w.norm_squared());
        let mut grad = &z + &self.p.b;
        grad.gemv(-1.0, &self.p.a, &w, 1.0);
        RegPoint {
            z,
            atz,
            v,
            w,
            value,
            grad,
        }
    }

    /// Value of `Psi` at `z`, written as in the six-term dual formula.
    pub fn value_literal(&self, z: &DVector<f64>) -> f64 {
        let v = self.v_of(&self.p.a.tr_mul(z));
        let w = v.map(|x| soft_threshold_scalar(x, self.threshold()));
        0.5 * z.norm_squared() + z.dot(&self.p.b) - self.p.lambda * w.lp_norm(1)
            - 0.5 * self.gamma * (&w - &v).norm_squared()
            + 0.5 * self.gamma * v.norm_squared()
            - 0.5 * self.gamma * self.xk_sq
    }
}

impl DualModel for RegDual<'_> {
    type Point = RegPoint;
    type Ray = RegRay;
    type Jacobian = GramOperator;

    fn dim(&self) -> usize {
        self.p.a.nrows()
    }

    fn needs_regularization(&self) -> bool {
        false
    }

    fn evaluate(&self, z: DVector<f64>) -> RegPoint {
        let atz = self.p.a.tr_mul(&z);
        self.point_from(z, atz)
    }

    /// `I + gamma^{-1} A_J A_J^T` with `J = {i : |v_i| > lambda/gamma}`.
    fn jacobian(&self, point: &RegPoint) -> GramOperator {
        let mask = clarke_mask_l1_unchecked(&point.v, self.threshold());
        GramOperator {
            identity: 1.0,
            scale: 1.0 / self.gamma,
            active: GramOperator::gather(&self.p.a, &mask.active()),
            ball: None,
        }
    }

    fn ray(&self, _point: &RegPoint, d: &DVector<f64>) -> RegRay {
        RegRay {
            d: d.clone(),
            atd: self.p.a.tr_mul(d),
        }
    }

    fn value_on_ray(&self, point: &RegPoint, ray: &RegRay, alpha: f64) -> f64 {
        let t = self.threshold();
        let inv = alpha / self.gamma;
        let w_sq: f64 = point
            .v
            .iter()
            .zip(ray.atd.iter())
            .map(|(&v, &ad)| soft_threshold_scalar(v - inv * ad, t).powi(2))
            .sum();
        let z = &point.z + &ray.d * alpha;
        self.value_from(&z, w_sq)
    }

    fn advance(&self, point: &RegPoint, ray: &RegRay, alpha: f64) -> RegPoint {
        let z = &point.z + &ray.d * alpha;
        let atz = &point.atz + &ray.atd * alpha;
        self.point_from(z, atz)
    }
}

fn validate_z(p: &RegProblem, z: &DVector<f64>) -> Result<()> {
    ensure_dim(z.len(), p.a.nrows(), "z")?;
    ensure_finite(z.as_slice(), "z")
}

/// `Psi(z)` for the subproblem at `(x^k, xi^k, gamma_k)`.
pub fn dual_value_reg(
    p: &RegProblem,
    x_k: &DVector<f64>,
    xi: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
) -> Result<f64> {
    validate_z(p, z)?;
    Ok(RegDual::new(p, x_k, xi, gamma)?.value_literal(z))
}

/// `grad Psi(z) = -A prox(v(z)) + z + b`.
pub fn dual_grad_reg(
    p: &RegProblem,
    x_k: &DVector<f64>,
    xi: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    validate_z(p, z)?;
    Ok(RegDual::new(p, x_k, xi, gamma)?.evaluate(z.clone()).grad)
}

/// The Newton matrix `I + gamma^{-1} A_J A_J^T` at `z`.
pub fn reg_jacobian_element(
    p: &RegProblem,
    x_k: &DVector<f64>,
    xi: &DVector<f64>,
    gamma: f64,
    z: &DVector<f64>,
) -> Result<GramOperator> {
    validate_z(p, z)?;
    let model = RegDual::new(p, x_k, xi, gamma)?;
    let point = model.evaluate(z.clone());
    Ok(model.jacobian(&point))
}

/// Builds the certificate `(w, -A^T e, 0)` and the criterion sides.
fn certificate(
    p: &RegProblem,
    point: &RegPoint,
    request: &SubproblemRequest<'_>,
) -> (ErrorCertificate, f64) {
    let ate = p.a.tr_mul(&point.grad);
    let step = &point.w - request.x_k;
    let lhs = ate.norm_squared() + ate.dot(&step).abs();
    let ref_sq = match (request.criterion, request.x_prev) {
        (Criterion::Sc2, Some(prev)) => (request.x_k - prev).norm_squared(),
        _ => step.norm_squared(),
    };
    let rhs = 0.5 * request.sigma * request.gamma * ref_sq;
    let delta_norm = ate.norm();
    let cert = ErrorCertificate {
        x_next: point.w.clone(),
        delta_vec: -ate,
        delta_scalar: 0.0,
        lhs,
        rhs,
        criterion: request.criterion,
        floor_accepted: false,
    };
    (cert, delta_norm)
}

/// One inexact subproblem solve from the dual point `z_warm`.
///
/// Returns the outcome and the final dual iterate (the next warm start).
pub fn reg_subsolve(
    p: &RegProblem,
    request: &SubproblemRequest<'_>,
    z_warm: &DVector<f64>,
    params: &SsnParams,
) -> Result<(SubproblemOutcome, DVector<f64>)> {
    let model = RegDual::new(p, request.x_k, request.xi, request.gamma)?;
    let floor = ssn::DUAL_FLOOR_RTOL * p.b.norm().max(1.0);
    let outcome = ssn::ssn_solve(
        &model,
        z_warm.clone(),
        |point, state| {
            let (mut cert, delta_norm) = certificate(p, point, request);
            let mut ok = cert.lhs <= cert.rhs;
            if ok && request.strict_summable {
                ok = delta_norm <= cert.rhs;
            }
            if !ok && state.at_floor(floor) {
                cert.floor_accepted = true;
                ok = true;
            }
            Ok(ok.then_some(cert))
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
            cert_constructions: outcome.newton_steps + 1,
            final_unit_step: outcome.last_alpha.map(|a| a == 1.0),
        },
        z_out,
    ))
}

/// Warm-started SSN subsolver: the first subproblem starts at `z = 0`, later
/// ones at the previous dual solution.
pub struct RegSubsolver<'a> {
    problem: &'a RegProblem,
    params: SsnParams,
    z: DVector<f64>,
}

impl<'a> RegSubsolver<'a> {
    pub fn new(problem: &'a RegProblem, params: SsnParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            problem,
            params,
            z: DVector::zeros(problem.rows()),
        })
    }

    pub fn dual(&self) -> &DVector<f64> {
        &self.z
    }
}

impl SubproblemSolver for RegSubsolver<'_> {
    fn solve(&mut self, request: &SubproblemRequest<'_>) -> Result<SubproblemOutcome> {
        let (outcome, z) = reg_subsolve(self.problem, request, &self.z, &self.params)?;
        self.z = z;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ibpdca::{check_criterion, subgrad_p2_norm};
    use crate::testutil::{central_diff, TestRng};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn problem(a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> RegProblem {
        RegProblem::new(Arc::new(a), b, lambda).unwrap()
    }

    fn random_problem(seed: u64, m: usize, n: usize, lambda: f64) -> RegProblem {
        let mut rng = TestRng::new(seed);
        let a = rng.matrix(m, n);
        let b = rng.vector(m);
        problem(a, b, lambda)
    }

    fn request<'a>(
        x_k: &'a DVector<f64>,
        x_prev: Option<&'a DVector<f64>>,
        xi: &'a DVector<f64>,
        gamma: f64,
        sigma: f64,
        criterion: Criterion,
    ) -> SubproblemRequest<'a> {
        SubproblemRequest {
            outer_iter: 0,
            x_k,
            x_prev,
            xi,
            gamma,
            sigma,
            criterion,
            strict_summable: false,
        }
    }

    /// Proximal gradient on the primal subproblem (without the constant
    /// `<xi, x^k>`), run far past convergence.
    fn primal_reference(p: &RegProblem, x_k: &DVector<f64>, xi: &DVector<f64>, gamma: f64) -> (DVector<f64>, f64) {
        let a = p.a();
        let lip = SymmetricEigen::new(a.transpose() * a).eigenvalues.max() + gamma;
        let obj = |x: &DVector<f64>| {
            p.lambda() * x.lp_norm(1) - xi.dot(x)
                + 0.5 * (a * x - p.b()).norm_squared()
                + 0.5 * gamma * (x - x_k).norm_squared()
        };
        let mut x = x_k.clone();
        for _ in 0..20000 {
            let g = a.tr_mul(&(a * &x - p.b())) - xi + (&x - x_k) * gamma;
            let y = &x - g / lip;
            x = y.map(|t| soft_threshold_scalar(t, p.lambda() / lip));
        }
        let f = obj(&x);
        (x, f)
    }

    #[test]
    fn objective_examples() {
        let p = problem(DMatrix::identity(2, 2), v(&[1.0, 1.0]), 1.0);
        assert_eq!(objective_reg(&p, &v(&[0.0, 0.0])).unwrap(), 1.0);
        let expected = 2.0 - 2f64.sqrt();
        assert_relative_eq!(objective_reg(&p, &v(&[1.0, 1.0])).unwrap(), expected, epsilon = 1e-15);
        let p1 = problem(DMatrix::from_element(1, 1, 2.0), v(&[1.0]), 3.0);
        assert_relative_eq!(objective_reg(&p1, &v(&[0.7])).unwrap(), 0.5 * 0.4f64.powi(2), epsilon = 1e-15);
        assert!(objective_reg(&p, &v(&[1.0])).is_err());
    }

    #[test]
    fn zero_column_rejected() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 3.0, 0.0, 1.0]);
        let err = RegProblem::new(Arc::new(a), v(&[1.0, 1.0]), 1.0).unwrap_err();
        assert!(matches!(err, Error::ZeroColumn(1)));
    }

    #[test]
    fn one_dimensional_dual() {
        let p = problem(DMatrix::from_element(1, 1, 1.0), v(&[1.0]), 10.0);
        let (xk, xi) = (v(&[0.0]), v(&[0.0]));
        assert_eq!(dual_grad_reg(&p, &xk, &xi, 1.0, &v(&[-1.0])).unwrap()[0], 0.0);
        // primal optimum is x = 0 with value 1/2
        let psi = dual_value_reg(&p, &xk, &xi, 1.0, &v(&[-1.0])).unwrap();
        assert_relative_eq!(-psi, 0.5, epsilon = 1e-15);
        let grid_min = (0..=4000)
            .map(|i| -2.0 + i as f64 * 1e-3)
            .map(|x: f64| 10.0 * x.abs() + 0.5 * (x - 1.0).powi(2) + 0.5 * x * x)
            .fold(f64::INFINITY, f64::min);
        assert!((-psi - grid_min).abs() <= 1e-8);
        assert_eq!(dual_value_reg(&p, &xk, &xi, 1.0, &v(&[0.0])).unwrap(), 0.0);

        let model = RegDual::new(&p, &xk, &xi, 1.0).unwrap();
        let out = ssn::ssn_solve(
            &model,
            v(&[0.0]),
            |pt, s| Ok((s.grad_norm <= 1e-14).then(|| pt.z[0])),
            &SsnParams::default(),
        )
        .unwrap();
        assert_relative_eq!(out.payload, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn strong_duality_on_random_instance() {
        let p = random_problem(11, 4, 9, 0.3);
        let mut rng = TestRng::new(12);
        let xk = rng.vector(9);
        let xi = subgrad_p2_norm(&xk, p.lambda());
        let gamma = 0.7;
        let model = RegDual::new(&p, &xk, &xi, gamma).unwrap();
        let out = ssn::ssn_solve(
            &model,
            DVector::zeros(4),
            |_, s| Ok((s.grad_norm <= 1e-12).then_some(())),
            &SsnParams::default(),
        )
        .unwrap();
        assert!(out.point.grad.norm() <= 1e-12);
        let (x_ref, f_ref) = primal_reference(&p, &xk, &xi, gamma);
        assert_relative_eq!(-out.point.value, f_ref, epsilon = 1e-8, max_relative = 1e-10);
        assert_relative_eq!(out.point.w, x_ref, epsilon = 1e-7);
        // Psi decreases monotonically along the iterates
        assert!(out.values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
    }

    #[test]
    fn literal_and_compact_values_agree() {
        let p = random_problem(3, 6, 15, 0.5);
        let mut rng = TestRng::new(4);
        for _ in 0..20 {
            let xk = rng.vector(15);
            let xi = rng.vector(15);
            let z = rng.vector(6);
            let model = RegDual::new(&p, &xk, &xi, 0.4).unwrap();
            let lit = model.value_literal(&z);
            let pt = model.evaluate(z.clone());
            assert_relative_eq!(lit, pt.value, epsilon = 1e-10, max_relative = 1e-12);
            let d = rng.vector(6);
            let ray = model.ray(&pt, &d);
            let a = model.value_on_ray(&pt, &ray, 0.3);
            assert_relative_eq!(a, model.value_literal(&(&z + &d * 0.3)), epsilon = 1e-10, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_and_jacobian_match_finite_differences() {
        let p = random_problem(5, 8, 20, 0.2);
        let mut rng = TestRng::new(6);
        let xk = rng.vector(20);
        let xi = subgrad_p2_norm(&xk, 0.2);
        let gamma = 0.5;
        let model = RegDual::new(&p, &xk, &xi, gamma).unwrap();
        let h = 1e-6;
        for _ in 0..100 {
            let z = rng.vector(8);
            let pt = model.evaluate(z.clone());
            let dir = rng.vector(8);
            let fd = central_diff(|y| model.value_literal(y), &z, &dir, h);
            let an = pt.grad.dot(&dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");

            // skip points with a coordinate near the kink
            let t = p.lambda() / gamma;
            let margin = pt.v.iter().map(|x| (x.abs() - t).abs()).fold(f64::INFINITY, f64::min);
            let step = (pt.atz.len() as f64).sqrt() * dir.norm() * h / gamma * 10.0;
            if margin > step {
                let jac = model.jacobian(&pt);
                let g1 = model.evaluate(&z + &dir * h).grad;
                let fd_j = (g1 - &pt.grad) / h;
                assert_relative_eq!(ssn::NewtonOperator::apply(&jac, &dir), fd_j, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn jacobian_spectrum() {
        let mut rng = TestRng::new(8);
        for seed in 0..5 {
            let p = random_problem(100 + seed, 20, 20, 1.0);
            let xk = rng.vector(20) * 3.0;
            let xi = rng.vector(20);
            let z = rng.vector(20);
            let jac = reg_jacobian_element(&p, &xk, &xi, 0.8, &z).unwrap();
            let dense = ssn::NewtonOperator::to_dense(&jac);
            assert_relative_eq!(dense.clone(), dense.transpose(), epsilon = 1e-12);
            assert!(SymmetricEigen::new(dense).eigenvalues.min() >= 1.0 - 1e-10);
        }
        // inactive everywhere: identity; all active with A = I: (1 + 1/gamma) I
        let p = problem(DMatrix::identity(3, 3), v(&[0.0, 0.0, 0.0]), 1.0);
        let zero = DVector::zeros(3);
        let jac = reg_jacobian_element(&p, &zero, &zero, 1.0, &zero).unwrap();
        assert_eq!(ssn::NewtonOperator::to_dense(&jac), DMatrix::identity(3, 3));
        let big = v(&[5.0, -5.0, 5.0]);
        let jac = reg_jacobian_element(&p, &big, &zero, 2.0, &zero).unwrap();
        assert_relative_eq!(ssn::NewtonOperator::to_dense(&jac), DMatrix::identity(3, 3) * 1.5, epsilon = 1e-15);
    }

    #[test]
    fn certificate_is_sound_and_recomputable() {
        let p = random_problem(21, 5, 20, 0.4);
        let mut rng = TestRng::new(22);
        let xk = rng.sparse(20, 4);
        let xi = subgrad_p2_norm(&xk, p.lambda());
        let gamma = 1.0;
        let req = request(&xk, None, &xi, gamma, 0.9, Criterion::Sc1);
        let (out, _) = reg_subsolve(&p, &req, &DVector::zeros(5), &SsnParams::default()).unwrap();
        let cert = &out.certificate;
        assert!(!cert.floor_accepted);
        assert!(check_criterion(cert, p.kernel(), Criterion::Sc1, 0.9, gamma, &xk, None));
        assert_eq!(cert.delta_scalar, 0.0);

        // -Delta - (-xi + A^T(Aw - b) + gamma (w - x^k)) must lie in lambda d||w||_1
        let w = &cert.x_next;
        let a = p.a();
        let r = &cert.delta_vec + &xi - a.tr_mul(&(a * w - p.b())) - (w - &xk) * gamma;
        for i in 0..20 {
            if w[i] != 0.0 {
                assert!((r[i] - p.lambda() * w[i].signum()).abs() <= 1e-8, "i={i}");
            } else {
                assert!(r[i].abs() <= p.lambda() + 1e-8, "i={i}");
            }
        }
    }

    #[test]
    fn sc2_certificate_uses_previous_pair() {
        let p = random_problem(31, 5, 20, 0.4);
        let mut rng = TestRng::new(32);
        let xk = rng.sparse(20, 4);
        let xprev = &xk + rng.vector(20) * 0.1;
        let xi = subgrad_p2_norm(&xk, p.lambda());
        let req = request(&xk, Some(&xprev), &xi, 0.5, 0.09, Criterion::Sc2);
        let (out, _) = reg_subsolve(&p, &req, &DVector::zeros(5), &SsnParams::default()).unwrap();
        let cert = &out.certificate;
        assert!(check_criterion(cert, p.kernel(), Criterion::Sc2, 0.09, 0.5, &xk, Some(&xprev)));
        assert_relative_eq!(cert.rhs, 0.5 * 0.09 * 0.5 * (&xk - &xprev).norm_squared(), max_relative = 1e-14);
    }

    #[test]
    fn zero_sigma_forces_exact_solve() {
        let p = random_problem(41, 5, 20, 0.4);
        let mut rng = TestRng::new(42);
        let xk = rng.vector(20);
        let xi = subgrad_p2_norm(&xk, p.lambda());
        let req = request(&xk, None, &xi, 1.0, 0.0, Criterion::Sc1);
        let (out, _) = reg_subsolve(&p, &req, &DVector::zeros(5), &SsnParams::default()).unwrap();
        assert!(out.certificate.delta_vec.norm() <= 1e-10);
        let (x_ref, _) = primal_reference(&p, &xk, &xi, 1.0);
        assert_relative_eq!(out.certificate.x_next, x_ref, epsilon = 1e-7);
    }

    #[test]
    fn fixed_point_is_accepted() {
        // x^k = 0 with lambda > ||A^T b||_inf solves its own subproblem
        let p = problem(DMatrix::from_element(1, 1, 1.0), v(&[1.0]), 10.0);
        let zero = v(&[0.0]);
        let req = request(&zero, None, &zero, 1.0, 0.9, Criterion::Sc1);
        let (out, z) = reg_subsolve(&p, &req, &v(&[0.0]), &SsnParams::default()).unwrap();
        assert_eq!(out.certificate.x_next[0], 0.0);
        assert!(out.certificate.delta_vec.norm() <= 1e-12);
        assert_relative_eq!(z[0], -1.0, epsilon = 1e-12);
    }
}
