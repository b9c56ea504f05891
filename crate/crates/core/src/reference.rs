//! Brute-force oracles: the kernel-space GP posterior and the sample-path information
//! gain. Both are plain dense O(t^3) computations kept independent of the feature-space
//! code path they are used to check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// Largest history the oracles accept.
pub const MAX_HISTORY: usize = 500;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub points: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) {
        self.points.push(x);
        self.rewards.push(y);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn regularized_gram<K: Kernel>(points: &[Vec<f64>], kernel: &K, lambda: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        kernel.k(&points[i], &points[j]) + if i == j { lambda } else { 0.0 }
    })
}

/// Posterior mean `k_t(x)^T (K_t + lambda I)^{-1} y_t` and variance
/// `rho^2 (k(x,x) - k_t(x)^T (K_t + lambda I)^{-1} k_t(x))`.
pub fn exact_posterior<K: Kernel>(
    history: &History,
    kernel: &K,
    lambda: f64,
    rho: f64,
    x: &[f64],
) -> Result<(f64, f64)> {
    if history.len() > MAX_HISTORY {
        return Err(Error::invalid(format!(
            "oracle history limited to {MAX_HISTORY} points"
        )));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    let prior = kernel.k(x, x);
    if history.is_empty() {
        return Ok((0.0, rho * rho * prior));
    }
    let inv = regularized_gram(&history.points, kernel, lambda)
        .try_inverse()
        .ok_or_else(|| Error::Numeric("K + lambda I not invertible".into()))?;
    let kx = DVector::from_iterator(history.len(), history.points.iter().map(|p| kernel.k(p, x)));
    let y = DVector::from_column_slice(&history.rewards);
    let mean = kx.dot(&(&inv * y));
    let var = rho * rho * (prior - kx.dot(&(&inv * &kx)));
    debug_assert!(var >= -1e-10, "negative posterior variance {var}");
    Ok((mean, var.max(0.0)))
}

/// `1/2 log det(I + K_T / lambda)` over the realized actions.
pub fn info_gain<K: Kernel>(actions: &[Vec<f64>], kernel: &K, lambda: f64) -> Result<f64> {
    if actions.len() > MAX_HISTORY {
        return Err(Error::invalid(format!(
            "oracle history limited to {MAX_HISTORY} points"
        )));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    if actions.is_empty() {
        return Ok(0.0);
    }
    let n = actions.len();
    let mut a = DMatrix::from_fn(n, n, |i, j| kernel.k(&actions[i], &actions[j]) / lambda);
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    // I + K / lambda is positive definite; the log-det comes from its Cholesky diagonal
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("I + K / lambda is not positive definite".into()))?;
    Ok(chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SeKernel;

    #[test]
    fn empty_history_is_prior() {
        let k = SeKernel::isotropic(2, 1.0).unwrap();
        let (mu, var) = exact_posterior(&History::new(), &k, 1.0, 0.5, &[0.3, 0.1]).unwrap();
        assert_eq!(mu, 0.0);
        assert!((var - 0.25).abs() < 1e-15);
    }

    #[test]
    fn interpolates_as_lambda_vanishes() {
        let k = SeKernel::isotropic(1, 1.0).unwrap();
        let mut h = History::new();
        h.push(vec![0.4], 0.7);
        let (mu, var) = exact_posterior(&h, &k, 1e-9, 0.5, &[0.4]).unwrap();
        assert!((mu - 0.7).abs() < 1e-8);
        assert!(var < 1e-8);
    }

    #[test]
    fn info_gain_rank_one() {
        let k = SeKernel::isotropic(2, 1.0).unwrap();
        assert_eq!(info_gain(&[], &k, 1.0).unwrap(), 0.0);
        for (t, lambda) in [(5usize, 1.0), (30, 0.25), (100, 4.0)] {
            let pts = vec![vec![0.2, -0.1]; t];
            let g = info_gain(&pts, &k, lambda).unwrap();
            assert!((g - 0.5 * (1.0 + t as f64 / lambda).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn info_gain_is_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let k = SeKernel::isotropic(2, 1.0).unwrap();
        let mut pts = vec![];
        let mut last = 0.0;
        for _ in 0..60 {
            pts.push(vec![
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]);
            let g = info_gain(&pts, &k, 0.5).unwrap();
            assert!(g >= last - 1e-12);
            last = g;
        }
    }
}
