//! Noise calibration and spectral bounds for the two privatizers.
//!
//! * Joint DP: the statistics `N_t = sum [phi, y]^T [phi, y]` are released through a
//!   binary-tree mechanism ([`NoisyTree`]) with Gaussian node noise of scale
//!   [`jdp_noise_scale`].
//! * Local joint DP: every client perturbs its own rank-one increment
//!   ([`ldp_perturb`]) before the server sees it.
//!
//! Both regimes shift the released matrix by `2 lambda_min I` ([`psd_shift`]) so that on
//! the accurate event the effective regularizer has spectrum in `[lambda_min, lambda_max]`.

mod local;
mod tree;

pub use local::{ldp_noise_scales, ldp_perturb, LdpConfig};
pub use tree::NoisyTree;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::posterior::NoiseBounds;

/// Depth of the aggregation tree over `horizon` leaves: `1 + ceil(log2 T)`.
pub fn tree_depth(horizon: usize) -> usize {
    1 + ceil_log2(horizon)
}

pub(crate) fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

fn check_privacy(alpha: f64, beta_priv: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(beta_priv > 0.0 && beta_priv < 1.0) {
        return Err(Error::invalid(format!(
            "beta_priv must lie in (0,1), got {beta_priv}"
        )));
    }
    Ok(())
}

/// Per-datum squared L2 sensitivity bound `1 + B^2 + 2 rho^2 ln(8T/beta)` of the
/// tree-mechanism input.
pub fn jdp_sensitivity_sq(beta_priv: f64, horizon: usize, b: f64, rho: f64) -> f64 {
    1.0 + b * b + 2.0 * rho * rho * (8.0 * horizon as f64 / beta_priv).ln()
}

/// Node noise scale for the tree mechanism:
/// `sigma^2 = 16 n Delta^2 ln(10/beta)^2 / alpha^2` with `n = 1 + ceil(log2 T)`.
pub fn jdp_noise_scale(
    alpha: f64,
    beta_priv: f64,
    horizon: usize,
    b: f64,
    rho: f64,
) -> Result<f64> {
    check_privacy(alpha, beta_priv)?;
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let n = tree_depth(horizon) as f64;
    let log_term = (10.0 / beta_priv).ln();
    let var = 16.0 * n * jdp_sensitivity_sq(beta_priv, horizon, b, rho) * log_term * log_term
        / (alpha * alpha);
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JdpConfig {
    pub alpha: f64,
    pub beta_priv: f64,
    pub horizon: usize,
    pub b: f64,
    pub rho: f64,
    /// Feature dimension of `Sigma` (the noise blocks are one larger).
    pub m: usize,
    pub depth: usize,
    pub sigma: f64,
}

impl JdpConfig {
    pub fn new(
        alpha: f64,
        beta_priv: f64,
        horizon: usize,
        b: f64,
        rho: f64,
        m: usize,
    ) -> Result<Self> {
        let sigma = jdp_noise_scale(alpha, beta_priv, horizon, b, rho)?;
        Ok(Self {
            alpha,
            beta_priv,
            horizon,
            b,
            rho,
            m,
            depth: tree_depth(horizon),
            sigma,
        })
    }

    /// Same configuration with the node noise scale replaced (e.g. zero for testing).
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn spectral(&self, zeta: f64) -> Result<SpectralBounds> {
        jdp_spectral(self.sigma, self.depth, self.m, self.horizon, zeta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    /// The base scale `Lambda` of the bounds.
    pub big_lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub zeta: f64,
}

impl SpectralBounds {
    /// Diagonal shift applied to released matrices, `2 lambda_min`.
    pub fn shift(&self) -> f64 {
        2.0 * self.lambda_min
    }

    pub fn is_degenerate(&self) -> bool {
        self.lambda_min == 0.0
    }

    /// Bounds to feed the confidence width; zero-noise bounds fall back to the
    /// non-private configuration.
    pub fn noise_bounds(&self) -> NoiseBounds {
        if self.is_degenerate() {
            NoiseBounds::None
        } else {
            NoiseBounds::Accurate {
                lambda_min: self.lambda_min,
                lambda_max: self.lambda_max,
                kappa: self.kappa,
            }
        }
    }
}

fn check_spectral_args(m: usize, horizon: usize, zeta: f64) -> Result<()> {
    if m == 0 || horizon == 0 {
        return Err(Error::invalid("m and T must be positive"));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::invalid(format!(
            "zeta must lie in (0,1), got {zeta}"
        )));
    }
    Ok(())
}

/// Accurate bounds under the tree mechanism:
/// `Lambda = sigma sqrt(2n) (4 sqrt(m) + 2 ln(2T/zeta))`, `lambda_min = Lambda`,
/// `lambda_max = 3 Lambda`, `kappa = sigma sqrt(n/Lambda) (sqrt(m) + sqrt(2 ln(2T/zeta)))`.
pub fn jdp_spectral(
    sigma: f64,
    depth: usize,
    m: usize,
    horizon: usize,
    zeta: f64,
) -> Result<SpectralBounds> {
    check_spectral_args(m, horizon, zeta)?;
    if sigma < 0.0 || depth == 0 {
        return Err(Error::invalid(
            "sigma must be non-negative and depth positive",
        ));
    }
    let n = depth as f64;
    let log = (2.0 * horizon as f64 / zeta).ln();
    let big = sigma * (2.0 * n).sqrt() * (4.0 * (m as f64).sqrt() + 2.0 * log);
    let kappa = if big == 0.0 {
        0.0
    } else {
        sigma * (n / big).sqrt() * ((m as f64).sqrt() + (2.0 * log).sqrt())
    };
    Ok(SpectralBounds {
        big_lambda: big,
        lambda_min: big,
        lambda_max: 3.0 * big,
        kappa,
        zeta,
    })
}

/// Accurate bounds under per-round local perturbation:
/// `Lambda = sqrt(T) (4 sqrt(m) + 2 ln(2T/zeta))`, `lambda_min = sigma_X Lambda`,
/// `lambda_max = 3 sigma_X Lambda`, `kappa = sigma_u sqrt(m T / Lambda)`.
pub fn ldp_spectral(
    sigma_x: f64,
    sigma_u: f64,
    m: usize,
    horizon: usize,
    zeta: f64,
) -> Result<SpectralBounds> {
    check_spectral_args(m, horizon, zeta)?;
    if sigma_x < 0.0 || sigma_u < 0.0 {
        return Err(Error::invalid("noise scales must be non-negative"));
    }
    let t = horizon as f64;
    let big = t.sqrt() * (4.0 * (m as f64).sqrt() + 2.0 * (2.0 * t / zeta).ln());
    Ok(SpectralBounds {
        big_lambda: big,
        lambda_min: sigma_x * big,
        lambda_max: 3.0 * sigma_x * big,
        kappa: sigma_u * (m as f64 * t / big).sqrt(),
        zeta,
    })
}

/// Adds `2 Lambda I` to a released noisy matrix so the effective noise is PSD on the
/// accurate event.
pub fn psd_shift(raw: &DMatrix<f64>, big_lambda: f64) -> DMatrix<f64> {
    let mut out = raw.clone();
    out.fill_diagonal_with(|d| d + 2.0 * big_lambda);
    out
}

trait FillDiagonal {
    fn fill_diagonal_with(&mut self, f: impl Fn(f64) -> f64);
}

impl FillDiagonal for DMatrix<f64> {
    fn fill_diagonal_with(&mut self, f: impl Fn(f64) -> f64) {
        for i in 0..self.nrows().min(self.ncols()) {
            self[(i, i)] = f(self[(i, i)]);
        }
    }
}
