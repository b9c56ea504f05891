//! Feature-space GP posterior and the UCB confidence machinery.
//!
//! The running statistics are `Sigma_t = sum phi phi^T` and `u_t = sum y phi`. A
//! [`NoisyView`] wraps a (possibly privatized) pair `(Sigma~, u~)` together with the
//! Cholesky factor of `V = Sigma~ + lambda I`, from which means, widths, the confidence
//! multiplier and the UCB argmax are computed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Feature norms may exceed one by rounding only.
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub sigma: DMatrix<f64>,
    pub u: DVector<f64>,
    pub t: usize,
}

impl PosteriorState {
    pub fn new(dim: usize) -> Self {
        Self {
            sigma: DMatrix::zeros(dim, dim),
            u: DVector::zeros(dim),
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Adds one observation: `Sigma += phi phi^T`, `u += y phi`.
    pub fn update(&mut self, phi: &DVector<f64>, y: f64) -> Result<()> {
        if phi.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature vector has length {}, state expects {}",
                phi.len(),
                self.dim()
            )));
        }
        if !y.is_finite() || phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite observation"));
        }
        if phi.norm() > 1.0 + NORM_SLACK {
            return Err(Error::invalid(format!(
                "feature norm {} exceeds 1",
                phi.norm()
            )));
        }
        self.sigma.ger(1.0, phi, phi, 1.0);
        self.u.axpy(y, phi, 1.0);
        self.t += 1;
        Ok(())
    }
}

/// A (possibly noisy) view of the statistics, factorized for prediction.
#[derive(Debug, Clone)]
pub struct NoisyView {
    sigma: DMatrix<f64>,
    u: DVector<f64>,
    lambda: f64,
    chol: Cholesky<f64, Dyn>,
    theta: DVector<f64>,
}

impl NoisyView {
    pub fn new(sigma: DMatrix<f64>, u: DVector<f64>, lambda: f64) -> Result<Self> {
        let m = u.len();
        if sigma.shape() != (m, m) {
            return Err(Error::invalid(format!(
                "Sigma is {:?}, u has length {m}",
                sigma.shape()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let mut v = sigma.clone();
        for i in 0..m {
            v[(i, i)] += lambda;
        }
        let chol = Cholesky::new(v).ok_or_else(|| {
            Error::Numeric("V = Sigma~ + lambda I is not positive definite".into())
        })?;
        let theta = chol.solve(&u);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite theta".into()));
        }
        Ok(Self {
            sigma,
            u,
            lambda,
            chol,
            theta,
        })
    }

    pub fn from_state(state: &PosteriorState, lambda: f64) -> Result<Self> {
        Self::new(state.sigma.clone(), state.u.clone(), lambda)
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    /// `log det V`, from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }

    /// `sqrt(phi^T V^{-1} phi)`.
    pub fn vinv_norm(&self, phi: &DVector<f64>) -> f64 {
        let mut z = phi.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        z.norm()
    }

    /// Posterior mean `theta~ . phi` and width `rho * ||phi||_{V^-1}`.
    pub fn predict(&self, phi: &DVector<f64>, rho: f64) -> (f64, f64) {
        (self.theta.dot(phi), rho * self.vinv_norm(phi))
    }
}

/// Spectral bounds on the privacy noise, or none for the non-private configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseBounds {
    /// `H_t = 0, h_t = 0`: lambda alone regularizes.
    None,
    Accurate {
        lambda_min: f64,
        lambda_max: f64,
        kappa: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    /// RKHS norm bound.
    pub b: f64,
    /// Sub-Gaussian noise scale.
    pub rho: f64,
    pub lambda: f64,
    /// Failure probability.
    pub zeta: f64,
    /// Uniform kernel approximation error.
    pub eps: f64,
    pub noise: NoiseBounds,
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("B", self.b)?;
        positive("rho", self.rho)?;
        positive("lambda", self.lambda)?;
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::Config(format!(
                "zeta must lie in (0,1), got {}",
                self.zeta
            )));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!(
                "eps must be non-negative, got {}",
                self.eps
            )));
        }
        if let NoiseBounds::Accurate {
            lambda_min,
            lambda_max,
            kappa,
        } = self.noise
        {
            if lambda_min < 0.0 || kappa < 0.0 || lambda_max < lambda_min {
                return Err(Error::Config(format!(
                    "need 0 <= lambda_min <= lambda_max and kappa >= 0, got ({lambda_min}, {lambda_max}, {kappa})"
                )));
            }
            if lambda_min == 0.0 && self.eps > 0.0 {
                return Err(Error::Config(
                    "lambda_min = 0 with eps > 0 makes the approximation term unbounded".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The confidence multiplier `beta_t^{1/2}` for round `t`:
///
/// `B sqrt(lambda_max/rho^2 + 1) + t B eps / (rho sqrt(lambda_min)) + kappa/rho
///  + sqrt(log det V - m log(lambda + lambda_min) + 2 ln(2/zeta))`.
///
/// In the non-private configuration `lambda_max = kappa = 0`, `lambda_min` drops out of
/// the determinant ratio and `lambda` replaces it in the approximation term.
pub fn beta_half(params: &ConfidenceParams, view: &NoisyView, t: usize) -> Result<f64> {
    params.validate()?;
    let ConfidenceParams {
        b,
        rho,
        lambda,
        zeta,
        eps,
        ..
    } = *params;
    let (lambda_min, lambda_max, kappa, eps_reg) = match params.noise {
        NoiseBounds::None => (0.0, 0.0, 0.0, lambda),
        NoiseBounds::Accurate {
            lambda_min,
            lambda_max,
            kappa,
        } => (lambda_min, lambda_max, kappa, lambda_min),
    };
    let m = view.dim() as f64;
    let approx_term = if eps == 0.0 {
        0.0
    } else {
        t as f64 * b * eps / (rho * eps_reg.sqrt())
    };
    let log_ratio = view.log_det() - m * (lambda + lambda_min).ln();
    let radicand = (log_ratio + 2.0 * (2.0 / zeta).ln()).max(0.0);
    Ok(b * (lambda_max / (rho * rho) + 1.0).sqrt() + approx_term + kappa / rho + radicand.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub phi: DVector<f64>,
}

/// UCB score `theta~ . phi + beta_half * rho * ||phi||_{V^-1}`.
pub fn ucb_score(view: &NoisyView, beta_half: f64, phi: &DVector<f64>, rho: f64) -> f64 {
    let (mean, width) = view.predict(phi, rho);
    mean + beta_half * width
}

/// Returns the id of the candidate with the largest UCB score; ties go to the lowest id.
pub fn select_action(
    view: &NoisyView,
    beta_half: f64,
    candidates: &[Candidate],
    rho: f64,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in candidates {
        let s = ucb_score(view, beta_half, &c.phi, rho);
        if !s.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite UCB score for candidate {}",
                c.id
            )));
        }
        best = match best {
            Some((id, bs)) if bs > s || (bs == s && id < c.id) => Some((id, bs)),
            _ => Some((c.id, s)),
        };
    }
    best.map(|(id, _)| id)
        .ok_or_else(|| Error::invalid("empty candidate set"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    fn np_params(eps: f64) -> ConfidenceParams {
        ConfidenceParams {
            b: 1.0,
            rho: 0.5,
            lambda: 1.0,
            zeta: 0.1,
            eps,
            noise: NoiseBounds::None,
        }
    }

    #[test]
    fn update_matches_batch() {
        let map = FeatureMap::qff(&[1.0, 1.0], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 200, 2);
        let ys: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut st = PosteriorState::new(map.output_dim());
        for (p, y) in pts.iter().zip(&ys) {
            st.update(&map.embed(p).unwrap(), *y).unwrap();
        }
        let phi = map.embed_rows(&pts).unwrap();
        let sigma = phi.transpose() * &phi;
        let u = phi.transpose() * DVector::from_vec(ys);
        assert!((st.sigma - &sigma).amax() < 1e-10);
        assert!((st.u - u).amax() < 1e-10);
        assert_eq!(st.t, 200);
        assert!(sigma.trace() <= 200.0 + 1e-9);
    }

    #[test]
    fn update_edge_cases() {
        let map = FeatureMap::qff(&[1.0], 3).unwrap();
        let phi = map.embed(&[0.2]).unwrap();
        let mut st = PosteriorState::new(6);
        st.update(&phi, 0.0).unwrap();
        assert_eq!(st.sigma, &phi * phi.transpose());
        assert!(st.u.iter().all(|v| *v == 0.0));
        assert!(st.update(&phi, f64::NAN).is_err());
        assert!(st.update(&(phi.clone() * 2.0), 1.0).is_err());
        assert!(st.update(&DVector::zeros(4), 1.0).is_err());
    }

    #[test]
    fn prior_prediction() {
        let view = NoisyView::new(DMatrix::zeros(4, 4), DVector::zeros(4), 4.0).unwrap();
        let phi = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let (mu, sd) = view.predict(&phi, 0.5);
        assert_eq!(mu, 0.0);
        assert!((sd - 0.25).abs() < 1e-15);
    }

    #[test]
    fn width_shrinks_with_data() {
        let map = FeatureMap::qff(&[1.0, 1.0], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let test = map.embed(&[0.1, -0.3]).unwrap();
        let mut st = PosteriorState::new(map.output_dim());
        let mut last = f64::INFINITY;
        for p in random_points(&mut rng, 60, 2) {
            let sd = NoisyView::from_state(&st, 1.0)
                .unwrap()
                .predict(&test, 0.5)
                .1;
            assert!(sd <= last + 1e-12);
            last = sd;
            st.update(&map.embed(&p).unwrap(), 1.0).unwrap();
        }
    }

    #[test]
    fn singular_view_is_numeric_error() {
        let mut s = DMatrix::zeros(2, 2);
        s[(0, 0)] = -5.0;
        assert!(matches!(
            NoisyView::new(s, DVector::zeros(2), 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn beta_degenerate_limit() {
        let view = NoisyView::new(DMatrix::zeros(6, 6), DVector::zeros(6), 1.0).unwrap();
        let b = beta_half(&np_params(0.0), &view, 1).unwrap();
        assert!((b - (1.0 + (2.0 * (20.0f64).ln()).sqrt())).abs() < 1e-12);

        let tiny = ConfidenceParams {
            noise: NoiseBounds::Accurate {
                lambda_min: 1e-300,
                lambda_max: 1e-300,
                kappa: 0.0,
            },
            ..np_params(0.0)
        };
        let b2 = beta_half(&tiny, &view, 1).unwrap();
        assert!((b - b2).abs() < 1e-9);
    }

    #[test]
    fn beta_kappa_is_additive() {
        let view = NoisyView::new(DMatrix::identity(3, 3) * 10.0, DVector::zeros(3), 1.0).unwrap();
        let with = |kappa| ConfidenceParams {
            noise: NoiseBounds::Accurate {
                lambda_min: 2.0,
                lambda_max: 6.0,
                kappa,
            },
            ..np_params(0.01)
        };
        let a = beta_half(&with(1.5), &view, 7).unwrap();
        let b = beta_half(&with(3.0), &view, 7).unwrap();
        assert!((b - a - 1.5 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn beta_rejects_zero_lambda_min_with_eps() {
        let view = NoisyView::new(DMatrix::zeros(2, 2), DVector::zeros(2), 1.0).unwrap();
        let p = ConfidenceParams {
            noise: NoiseBounds::Accurate {
                lambda_min: 0.0,
                lambda_max: 0.0,
                kappa: 0.0,
            },
            ..np_params(0.1)
        };
        assert!(beta_half(&p, &view, 3).is_err());
    }

    #[test]
    fn beta_grows_along_a_nonprivate_run() {
        let map = FeatureMap::qff(&[1.0, 1.0], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = PosteriorState::new(map.output_dim());
        let mut last = 0.0;
        for (t, p) in random_points(&mut rng, 80, 2).iter().enumerate() {
            let view = NoisyView::from_state(&st, 1.0).unwrap();
            let b = beta_half(&np_params(1e-3), &view, t + 1).unwrap();
            assert!(b >= last);
            last = b;
            st.update(&map.embed(p).unwrap(), 0.5).unwrap();
        }
    }

    #[test]
    fn select_edge_cases() {
        let view =
            NoisyView::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        let c = |id, a: f64, b: f64| Candidate {
            id,
            phi: DVector::from_vec(vec![a, b]),
        };
        assert!(select_action(&view, 1.0, &[], 0.5).is_err());
        assert_eq!(
            select_action(&view, 1.0, &[c(7, 0.0, 1.0)], 0.5).unwrap(),
            7
        );
        assert_eq!(
            select_action(&view, 0.0, &[c(0, 0.0, 1.0), c(1, 1.0, 0.0)], 0.5).unwrap(),
            1
        );
        // identical scores: lowest id wins regardless of order
        assert_eq!(
            select_action(&view, 2.0, &[c(5, 0.6, 0.8), c(3, 0.6, 0.8)], 0.5).unwrap(),
            3
        );
    }

    #[test]
    fn select_matches_brute_force_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 10;
        for _ in 0..20 {
            let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let sigma = &a * a.transpose();
            let u = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
            let view = NoisyView::new(sigma.clone(), u.clone(), 0.7).unwrap();
            let cands: Vec<Candidate> = (0..25)
                .map(|id| {
                    let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
                    Candidate {
                        id,
                        phi: v.normalize(),
                    }
                })
                .collect();
            let beta = rng.random_range(0.0..3.0);
            // independent route: explicit inverse
            let vinv = (sigma + DMatrix::identity(m, m) * 0.7)
                .try_inverse()
                .unwrap();
            let theta = &vinv * &u;
            let brute = cands
                .iter()
                .map(|c| {
                    (
                        c.id,
                        theta.dot(&c.phi) + beta * 0.5 * (c.phi.dot(&(&vinv * &c.phi))).sqrt(),
                    )
                })
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| {
                    if x.1 > acc.1 {
                        x
                    } else {
                        acc
                    }
                });
            assert_eq!(select_action(&view, beta, &cands, 0.5).unwrap(), brute.0);
        }
    }

    #[test]
    fn pure_exploitation_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 6;
        let cands: Vec<Candidate> = (0..10)
            .map(|id| Candidate {
                id,
                phi: DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)).normalize(),
            })
            .collect();
        let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let base = NoisyView::new(DMatrix::zeros(m, m), u.clone(), 1.0).unwrap();
        let scaled = NoisyView::new(DMatrix::zeros(m, m), u * 37.0, 1.0).unwrap();
        assert_eq!(
            select_action(&base, 0.0, &cands, 0.5).unwrap(),
            select_action(&scaled, 0.0, &cands, 0.5).unwrap()
        );
    }
}
