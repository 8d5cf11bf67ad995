//! Helpers shared by unit tests.

use nalgebra::{DMatrix, DVector};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub(crate) struct TestRng(Xoshiro256PlusPlus);

impl TestRng {
    pub(crate) fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub(crate) fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub(crate) fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub(crate) fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    pub(crate) fn matrix(&mut self, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| self.normal())
    }

    pub(crate) fn sparse(&mut self, n: usize, s: usize) -> DVector<f64> {
        let mut x = DVector::zeros(n);
        for i in 0..s {
            let j = (i * 7919 + (self.0.next_u64() % 3) as usize) % n;
            x[j] = self.normal();
        }
        x
    }
}

/// Central finite-difference derivative of `f` at `z` along `dir`.
pub(crate) fn central_diff(f: impl Fn(&DVector<f64>) -> f64, z: &DVector<f64>, dir: &DVector<f64>, h: f64) -> f64 {
    (f(&(z + dir * h)) - f(&(z - dir * h))) / (2.0 * h)
}
