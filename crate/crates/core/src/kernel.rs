//! Bregman kernels `phi` and their distances
//! `D(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, ensure_finite, Result};

/// A strongly convex, differentiable kernel generating a Bregman distance.
pub trait BregmanKernel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> f64;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Closed-form `D(x, y)`.
    fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64;

    /// Modulus `mu` with `D(x, y) >= mu/2 ||x - y||^2`.
    fn strong_convexity(&self) -> f64 {
        1.0
    }
}

/// `phi(x) = 1/2 ||x||^2`.
#[derive(Debug, Clone)]
pub struct QuadraticKernel {
    dim: usize,
}

impl QuadraticKernel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl BregmanKernel for QuadraticKernel {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * (x - y).norm_squared()
    }
}

/// `phi(x) = 1/2 ||x||^2 + 1/2 ||A x||^2`.
///
/// Only a handle to `A` is kept; `A^T A` is never formed.
#[derive(Debug, Clone)]
pub struct GramKernel {
    a: Arc<DMatrix<f64>>,
}

impl GramKernel {
    pub fn new(a: Arc<DMatrix<f64>>) -> Self {
        Self { a }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl BregmanKernel for GramKernel {
    fn name(&self) -> &'static str {
        "quadratic+gram"
    }

    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.norm_squared() + 0.5 * (&*self.a * x).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let ax = &*self.a * x;
        x + self.a.tr_mul(&ax)
    }

    fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let diff = x - y;
        0.5 * diff.norm_squared() + 0.5 * (&*self.a * &diff).norm_squared()
    }
}

/// Gradient of the kernel with input validation.
pub fn phi_grad(kernel: &dyn BregmanKernel, x: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_dim(x.len(), kernel.dim(), "kernel argument")?;
    ensure_finite(x.as_slice(), "kernel argument")?;
    Ok(kernel.gradient(x))
}

/// Bregman distance with input validation.
pub fn bregman_distance(kernel: &dyn BregmanKernel, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    ensure_dim(x.len(), kernel.dim(), "kernel argument x")?;
    ensure_dim(y.len(), kernel.dim(), "kernel argument y")?;
    ensure_finite(x.as_slice(), "kernel argument x")?;
    ensure_finite(y.as_slice(), "kernel argument y")?;
    Ok(kernel.distance(x, y))
}
