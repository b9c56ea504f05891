use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_privacy, ldp_spectral, SpectralBounds};
use crate::error::{Error, Result};

/// Noise scales `(sigma_X, sigma_u)` for local perturbation, at the lower bounds
/// `sigma_X^2 = 8/alpha^2 ln(5/(2 beta))` and
/// `sigma_u^2 = 8/alpha^2 (B^2 + 2 ln(8m/beta)) ln(5/beta)`.
pub fn ldp_noise_scales(alpha: f64, beta_priv: f64, b: f64, m: usize) -> Result<(f64, f64)> {
    check_privacy(alpha, beta_priv)?;
    if m == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    let a2 = alpha * alpha;
    let var_x = 8.0 / a2 * (5.0 / (2.0 * beta_priv)).ln();
    let var_u =
        8.0 / a2 * (b * b + 2.0 * (8.0 * m as f64 / beta_priv).ln()) * (5.0 / beta_priv).ln();
    Ok((var_x.sqrt(), var_u.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpConfig {
    pub alpha: f64,
    pub beta_priv: f64,
    pub b: f64,
    pub m: usize,
    pub horizon: usize,
    pub sigma_x: f64,
    pub sigma_u: f64,
}

impl LdpConfig {
    pub fn new(alpha: f64, beta_priv: f64, b: f64, m: usize, horizon: usize) -> Result<Self> {
        let (sigma_x, sigma_u) = ldp_noise_scales(alpha, beta_priv, b, m)?;
        Ok(Self {
            alpha,
            beta_priv,
            b,
            m,
            horizon,
            sigma_x,
            sigma_u,
        })
    }

    pub fn with_scales(mut self, sigma_x: f64, sigma_u: f64) -> Self {
        self.sigma_x = sigma_x;
        self.sigma_u = sigma_u;
        self
    }

    pub fn spectral(&self, zeta: f64) -> Result<SpectralBounds> {
        ldp_spectral(self.sigma_x, self.sigma_u, self.m, self.horizon, zeta)
    }
}

/// Client-side perturbation of one observation:
/// `(phi phi^T + N, y phi + n)` with `N` symmetric, `N[i,j] ~ N(0, sigma_X^2)` for
/// `i >= j`, and `n[i] ~ N(0, sigma_u^2)`.
pub fn ldp_perturb<R: Rng + ?Sized>(
    phi: &DVector<f64>,
    y: f64,
    cfg: &LdpConfig,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = phi.len();
    if m != cfg.m {
        return Err(Error::invalid(format!(
            "feature vector has length {m}, config expects {}",
            cfg.m
        )));
    }
    if !y.is_finite() || phi.norm() > 1.0 + 1e-9 {
        return Err(Error::invalid(
            "observation must be finite with feature norm <= 1",
        ));
    }
    let mut d_sigma = phi * phi.transpose();
    for j in 0..m {
        for i in j..m {
            let z: f64 = StandardNormal.sample(rng);
            let noise = cfg.sigma_x * z;
            d_sigma[(i, j)] += noise;
            if i != j {
                d_sigma[(j, i)] += noise;
            }
        }
    }
    let mut d_u = phi * y;
    for v in d_u.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += cfg.sigma_u * z;
    }
    Ok((d_sigma, d_u))
}
