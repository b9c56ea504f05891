//! Squared-exponential kernels with per-dimension lengthscales.
//!
//! `k(x, y) = exp(-sum_i (x_i - y_i)^2 / (2 nu_i^2))`, output variance 1.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A positive-definite kernel on `R^d`.
pub trait Kernel {
    fn k(&self, x: &[f64], y: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeKernel {
    lengthscales: Vec<f64>,
}

impl SeKernel {
    pub fn new(lengthscales: Vec<f64>) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::invalid("kernel needs at least one lengthscale"));
        }
        if let Some(bad) = lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid(format!(
                "lengthscales must be finite and positive, got {bad}"
            )));
        }
        Ok(Self { lengthscales })
    }

    /// Same lengthscale in every one of `d` dimensions.
    pub fn isotropic(d: usize, lengthscale: f64) -> Result<Self> {
        Self::new(vec![lengthscale; d])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn min_lengthscale(&self) -> f64 {
        self.lengthscales
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x
            .iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| {
                let r = (a - b) / l;
                r * r
            })
            .sum();
        (-0.5 * sq).exp()
    }

    /// Gram matrix `K[i, j] = k(x_i, x_j)`. An empty point list gives a 0x0 matrix.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        for p in points {
            self.check_dim(p)?;
        }
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let v = self.eval_unchecked(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, kernel expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl Kernel for SeKernel {
    fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_unchecked(x, y)
    }
}
