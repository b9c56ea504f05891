//! Synthetic bandit environments.
//!
//! [`SyntheticEnv`] draws an RKHS function `f(x) = sum_i a_i k(x_i, x)` with anchors in
//! the radius-2 ball and `||a||_1 <= 1`, then serves decision sets with one point of
//! value at least 0.8 and all others at most 0.6, and Bernoulli rewards with mean
//! `f(x)`. [`CamelbackEnv`] serves uniform decision sets on the Camelback domain with
//! the rescaled function as Bernoulli mean.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{linspace, tensor_grid};
use crate::kernels::SeKernel;

/// Radius of the action domain ball.
pub const DOMAIN_RADIUS: f64 = 2.0;
pub const NUM_ANCHORS: usize = 4;
pub const GOOD_THRESHOLD: f64 = 0.8;
pub const BAD_THRESHOLD: f64 = 0.6;
pub const PROBE_POINTS: usize = 10_000;
pub const FUNCTION_ATTEMPTS: usize = 10_000;
pub const DECISION_SET_ATTEMPTS: usize = 100_000;

const PROBE_SEED: u64 = 0x9d0b_e5a1;

/// Uniform point in the `d`-ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        v.iter_mut().for_each(|x| *x *= r / norm);
        return v;
    }
}

/// Uniform point in the unit L1 ball of dimension `k`.
fn sample_l1_ball<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..=k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e[..k]
        .iter()
        .map(|v| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * v / total
        })
        .collect()
}

/// Lattice points with spacing `step` inside the `d`-ball.
pub fn ball_grid(d: usize, radius: f64, step: f64) -> Vec<Vec<f64>> {
    let per_axis = (2.0 * radius / step).round() as usize + 1;
    let axis = linspace(-radius, radius, per_axis);
    tensor_grid(&vec![axis; d])
        .into_iter()
        .filter(|p| p.iter().map(|x| x * x).sum::<f64>() <= radius * radius + 1e-12)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFunction {
    pub anchors: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub kernel: SeKernel,
}

impl SyntheticFunction {
    pub fn new(anchors: Vec<Vec<f64>>, weights: Vec<f64>, kernel: SeKernel) -> Result<Self> {
        if anchors.is_empty() || anchors.len() != weights.len() {
            return Err(Error::invalid(
                "need one weight per anchor and at least one anchor",
            ));
        }
        if anchors.iter().any(|a| a.len() != kernel.dim()) {
            return Err(Error::invalid("anchor dimension does not match the kernel"));
        }
        if weights.iter().map(|w| w.abs()).sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::invalid("weights must lie in the unit L1 ball"));
        }
        Ok(Self {
            anchors,
            weights,
            kernel,
        })
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.anchors
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * self.kernel.eval_unchecked(a, x))
            .sum()
    }
}

fn probe_points(d: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(PROBE_SEED);
    (0..PROBE_POINTS)
        .map(|_| sample_ball(d, DOMAIN_RADIUS, &mut rng))
        .collect()
}

/// Draws anchors uniformly in the ball and weights uniformly in the unit L1 ball, until
/// `f` is within `[0, 1]` on the probe points and reaches at least 0.8 somewhere.
pub fn sample_function<R: Rng + ?Sized>(
    d: usize,
    kernel: &SeKernel,
    rng: &mut R,
) -> Result<SyntheticFunction> {
    if d == 0 || kernel.dim() != d {
        return Err(Error::invalid("kernel dimension must equal d >= 1"));
    }
    let probes = probe_points(d);
    let mut best_seen = f64::NEG_INFINITY;
    for _ in 0..FUNCTION_ATTEMPTS {
        let anchors: Vec<Vec<f64>> = (0..NUM_ANCHORS)
            .map(|_| sample_ball(d, DOMAIN_RADIUS, rng))
            .collect();
        let weights = sample_l1_ball(NUM_ANCHORS, rng);
        let f = SyntheticFunction {
            anchors,
            weights,
            kernel: kernel.clone(),
        };
        let mut max = f64::NEG_INFINITY;
        let mut ok = true;
        for p in &probes {
            let v = f.eval(p);
            if !(0.0..=1.0).contains(&v) {
                ok = false;
                break;
            }
            max = max.max(v);
        }
        if ok {
            best_seen = best_seen.max(max);
            if max >= GOOD_THRESHOLD {
                return Ok(f);
            }
        }
    }
    Err(Error::Config(format!(
        "no admissible function after {FUNCTION_ATTEMPTS} draws (d = {d}, best in-range maximum {best_seen:.3})"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl DecisionSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the best point (first on ties).
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn best_value(&self) -> f64 {
        self.values[self.best()]
    }

    pub fn regret(&self, idx: usize) -> f64 {
        self.best_value() - self.values[idx]
    }
}

/// Rejection-samples `n` points: one with `f >= 0.8` and `n - 1` with `0 <= f <= 0.6`,
/// returned in shuffled order.
pub fn sample_decision_set<R: Rng + ?Sized>(
    f: &SyntheticFunction,
    n: usize,
    rng: &mut R,
) -> Result<DecisionSet> {
    if n < 2 {
        return Err(Error::invalid("decision sets need at least two points"));
    }
    let mut good: Option<(Vec<f64>, f64)> = None;
    let mut bad: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n - 1);
    for _ in 0..DECISION_SET_ATTEMPTS {
        let x = sample_ball(f.dim(), DOMAIN_RADIUS, rng);
        let v = f.eval(&x);
        if (GOOD_THRESHOLD..=1.0).contains(&v) {
            if good.is_none() {
                good = Some((x, v));
            }
        } else if (0.0..=BAD_THRESHOLD).contains(&v) && bad.len() < n - 1 {
            bad.push((x, v));
        }
        if bad.len() == n - 1 && good.is_some() {
            let mut all = bad;
            all.extend(good);
            all.shuffle(rng);
            let (points, values) = all.into_iter().unzip();
            return Ok(DecisionSet { points, values });
        }
    }
    Err(Error::Environment(format!(
        "could not assemble a decision set of size {n} in {DECISION_SET_ATTEMPTS} draws (near-optimal found: {}, suboptimal: {})",
        good.is_some(),
        bad.len()
    )))
}

/// Bernoulli draw with success probability `mean`. Always consumes one uniform.
pub fn reward<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    assert!(
        (0.0..=1.0).contains(&mean),
        "Bernoulli mean {mean} outside [0, 1]"
    );
    let u: f64 = rng.random();
    if u < mean {
        1.0
    } else {
        0.0
    }
}

pub const CAMEL_X1: (f64, f64) = (-2.0, 2.0);
pub const CAMEL_X2: (f64, f64) = (-1.0, 1.0);
/// Global minimum of the raw function, attained at `+-(0.0898..., -0.7126...)`.
pub const CAMEL_MIN: f64 = -1.031_628_453_489_877_4;
/// Maximum over the 201x201 reference grid of the domain, attained at the corners
/// `(2, 1)` and `(-2, -1)` where the raw value is `86/15`.
pub const CAMEL_MAX: f64 = 86.0 / 15.0;

pub fn camelback_raw(x1: f64, x2: f64) -> f64 {
    let x1s = x1 * x1;
    let x2s = x2 * x2;
    (4.0 - 2.1 * x1s + x1s * x1s / 3.0) * x1s + x1 * x2 + (-4.0 + 4.0 * x2s) * x2s
}

/// Camelback negated and rescaled to `[0, 1]` over its domain; 1 at the global minima.
pub fn camelback(x: &[f64]) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::invalid("camelback is defined on R^2"));
    }
    let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    if !inside(x[0], CAMEL_X1) || !inside(x[1], CAMEL_X2) {
        return Err(Error::invalid(format!(
            "({}, {}) is outside [-2,2]x[-1,1]",
            x[0], x[1]
        )));
    }
    let v = (CAMEL_MAX - camelback_raw(x[0], x[1])) / (CAMEL_MAX - CAMEL_MIN);
    Ok(v.clamp(0.0, 1.0))
}

/// Serializable description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Synthetic {
        d: usize,
        n_candidates: usize,
        /// Fixed function; when absent it is drawn from the run seed.
        function: Option<(Vec<Vec<f64>>, Vec<f64>)>,
    },
    Camelback {
        n_candidates: usize,
    },
}

impl EnvSpec {
    pub fn dim(&self) -> usize {
        match self {
            EnvSpec::Synthetic { d, .. } => *d,
            EnvSpec::Camelback { .. } => 2,
        }
    }

    pub fn n_candidates(&self) -> usize {
        match self {
            EnvSpec::Synthetic { n_candidates, .. } | EnvSpec::Camelback { n_candidates } => {
                *n_candidates
            }
        }
    }

    /// Points covering the action domain, used to certify the feature map.
    pub fn domain_grid(&self) -> Vec<Vec<f64>> {
        match self {
            EnvSpec::Synthetic { d, .. } => {
                let step = match d {
                    1 => 0.02,
                    2 => 0.2,
                    _ => 0.5,
                };
                ball_grid(*d, DOMAIN_RADIUS, step)
            }
            EnvSpec::Camelback { .. } => tensor_grid(&[
                linspace(CAMEL_X1.0, CAMEL_X1.1, 21),
                linspace(CAMEL_X2.0, CAMEL_X2.1, 11),
            ]),
        }
    }

    /// Builds the environment; any randomness comes from `rng`, which the environment
    /// keeps for decision sets and rewards.
    pub fn build(
        &self,
        kernel: &SeKernel,
        mut rng: ChaCha20Rng,
    ) -> Result<Box<dyn Environment + Send>> {
        match self {
            EnvSpec::Synthetic {
                d,
                n_candidates,
                function,
            } => {
                let f = match function {
                    Some((anchors, weights)) => {
                        SyntheticFunction::new(anchors.clone(), weights.clone(), kernel.clone())?
                    }
                    None => sample_function(*d, kernel, &mut rng)?,
                };
                Ok(Box::new(SyntheticEnv::new(f, *n_candidates, rng)?))
            }
            EnvSpec::Camelback { n_candidates } => {
                Ok(Box::new(CamelbackEnv::new(*n_candidates, rng)?))
            }
        }
    }
}

pub trait Environment {
    fn dim(&self) -> usize;
    fn next_decision_set(&mut self) -> Result<DecisionSet>;
    /// Reward for playing point `idx` of `set`.
    fn reward(&mut self, set: &DecisionSet, idx: usize) -> f64;
}

pub struct SyntheticEnv {
    pub function: SyntheticFunction,
    n_candidates: usize,
    rng: ChaCha20Rng,
}

impl SyntheticEnv {
    pub fn new(function: SyntheticFunction, n_candidates: usize, rng: ChaCha20Rng) -> Result<Self> {
        if n_candidates < 2 {
            return Err(Error::invalid("n_candidates must be at least 2"));
        }
        Ok(Self {
            function,
            n_candidates,
            rng,
        })
    }
}

impl Environment for SyntheticEnv {
    fn dim(&self) -> usize {
        self.function.dim()
    }

    fn next_decision_set(&mut self) -> Result<DecisionSet> {
        sample_decision_set(&self.function, self.n_candidates, &mut self.rng)
    }

    fn reward(&mut self, set: &DecisionSet, idx: usize) -> f64 {
        reward(set.values[idx], &mut self.rng)
    }
}

pub struct CamelbackEnv {
    n_candidates: usize,
    rng: ChaCha20Rng,
}

impl CamelbackEnv {
    pub fn new(n_candidates: usize, rng: ChaCha20Rng) -> Result<Self> {
        if n_candidates < 1 {
            return Err(Error::invalid("n_candidates must be at least 1"));
        }
        Ok(Self { n_candidates, rng })
    }
}

impl Environment for CamelbackEnv {
    fn dim(&self) -> usize {
        2
    }

    fn next_decision_set(&mut self) -> Result<DecisionSet> {
        let mut points = Vec::with_capacity(self.n_candidates);
        let mut values = Vec::with_capacity(self.n_candidates);
        for _ in 0..self.n_candidates {
            let p = vec![
                self.rng.random_range(CAMEL_X1.0..=CAMEL_X1.1),
                self.rng.random_range(CAMEL_X2.0..=CAMEL_X2.1),
            ];
            values.push(camelback(&p)?);
            points.push(p);
        }
        Ok(DecisionSet { points, values })
    }

    fn reward(&mut self, set: &DecisionSet, idx: usize) -> f64 {
        reward(set.values[idx], &mut self.rng)
    }
}
