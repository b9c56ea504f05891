//! Finite-dimensional Fourier feature maps for squared-exponential kernels.
//!
//! Two constructions are provided:
//!
//! * quadrature Fourier features ([`FeatureMap::qff`]): the spectral integral of the
//!   kernel is discretized with a tensor-product Gauss-Hermite rule, giving an error
//!   that decays exponentially in the number of nodes per dimension;
//! * random Fourier features ([`FeatureMap::rff`]): frequencies are drawn i.i.d. from
//!   the spectral density, with error of order `m^{-1/2}`.
//!
//! In both cases the embedding pairs every frequency `w_i` with `(sqrt(a_i) cos(w_i . x),
//! sqrt(a_i) sin(w_i . x))`, where the weights `a_i` sum to one, so every embedding has
//! unit Euclidean norm and the output dimension is twice the number of frequencies.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::SeKernel;

/// Largest supported number of Gauss-Hermite nodes.
pub const MAX_NODES: usize = 64;

/// Refuse to build QFF maps with more frequencies than this.
pub const MAX_QFF_FREQUENCIES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Qff,
    Rff,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Qff => "qff",
            FeatureKind::Rff => "rff",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qff" => Ok(FeatureKind::Qff),
            "rff" => Ok(FeatureKind::Rff),
            other => Err(Error::invalid(format!("unknown feature kind `{other}`"))),
        }
    }
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the weight `exp(-x^2)`.
///
/// Nodes are the roots of the physicists' Hermite polynomial `H_n`, sorted ascending.
/// They come from the Golub-Welsch eigenproblem and are then polished with Newton steps
/// on the orthonormal Hermite recurrence; weights are the Christoffel numbers
/// `1 / sum_k p_k(x_i)^2`, which equal `2^{n-1} n! sqrt(pi) / (n^2 H_{n-1}(x_i)^2)`.
pub fn hermite_nodes_weights(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=MAX_NODES).contains(&n) {
        return Err(Error::invalid(format!(
            "number of Gauss-Hermite nodes must be in 1..={MAX_NODES}, got {n}"
        )));
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pn, pn1, _) = orthonormal_hermite(n, *x);
            let dpn = (2.0 * n as f64).sqrt() * pn1;
            if dpn == 0.0 {
                break;
            }
            *x -= pn / dpn;
        }
    }
    // exact symmetry about the origin
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| 1.0 / orthonormal_hermite(n, x).2)
        .collect();
    for i in 0..n / 2 {
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok((nodes, weights))
}

/// Returns `(p_n(x), p_{n-1}(x), sum_{k<n} p_k(x)^2)` for the Hermite polynomials
/// orthonormal under `exp(-x^2)`.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// Analytic uniform-error bound for QFF on `[0, 1]^d`:
/// `d 2^{d-1} sqrt(pi/2) m^{-m} (e / (4 nu^2))^m` with `nu` the smallest lengthscale.
pub fn qff_error_bound(d: usize, nodes_per_dim: usize, min_lengthscale: f64) -> f64 {
    let d = d as f64;
    let m = nodes_per_dim as f64;
    let log = d.ln() + (d - 1.0) * 2f64.ln() + 0.5 * (PI / 2.0).ln() - m * m.ln()
        + m * (1.0 - (4.0 * min_lengthscale * min_lengthscale).ln());
    log.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: FeatureKind,
    dim: usize,
    nodes_per_dim: Option<usize>,
    lengthscales: Vec<f64>,
    /// Row-major `num_frequencies x dim`.
    frequencies: Vec<f64>,
    weights: Vec<f64>,
    sqrt_weights: Vec<f64>,
}

impl FeatureMap {
    /// Quadrature Fourier features with `nodes_per_dim` Gauss-Hermite nodes in each of the
    /// `lengthscales.len()` input dimensions.
    pub fn qff(lengthscales: &[f64], nodes_per_dim: usize) -> Result<Self> {
        let kernel = SeKernel::new(lengthscales.to_vec())?;
        let d = kernel.dim();
        let count = (nodes_per_dim as u128)
            .checked_pow(d as u32)
            .filter(|c| *c <= MAX_QFF_FREQUENCIES as u128)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "QFF needs m_bar^d = {nodes_per_dim}^{d} frequencies, above the limit of {MAX_QFF_FREQUENCIES}"
                ))
            })? as usize;
        let (nodes, node_weights) = hermite_nodes_weights(nodes_per_dim)?;
        let norm = PI.powf(d as f64 / 2.0);

        let mut frequencies = Vec::with_capacity(count * d);
        let mut weights = Vec::with_capacity(count);
        let mut index = vec![0usize; d];
        for _ in 0..count {
            let mut w = 1.0;
            for (j, &i) in index.iter().enumerate() {
                frequencies.push(2f64.sqrt() * nodes[i] / lengthscales[j]);
                w *= node_weights[i];
            }
            weights.push(w / norm);
            // odometer over the tensor grid, last dimension fastest
            for j in (0..d).rev() {
                index[j] += 1;
                if index[j] < nodes_per_dim {
                    break;
                }
                index[j] = 0;
            }
        }
        Ok(Self::from_parts(
            FeatureKind::Qff,
            d,
            Some(nodes_per_dim),
            lengthscales.to_vec(),
            frequencies,
            weights,
        ))
    }

    /// Random Fourier features: `num_frequencies` draws from the Gaussian spectral density
    /// (per-dimension standard deviation `1 / nu_j`) with uniform weights.
    pub fn rff(lengthscales: &[f64], num_frequencies: usize, seed: u64) -> Result<Self> {
        let kernel = SeKernel::new(lengthscales.to_vec())?;
        if num_frequencies == 0 {
            return Err(Error::invalid("RFF needs at least one frequency"));
        }
        let d = kernel.dim();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut frequencies = Vec::with_capacity(num_frequencies * d);
        for _ in 0..num_frequencies {
            for l in lengthscales {
                let z: f64 = StandardNormal.sample(&mut rng);
                frequencies.push(z / l);
            }
        }
        let weights = vec![1.0 / num_frequencies as f64; num_frequencies];
        Ok(Self::from_parts(
            FeatureKind::Rff,
            d,
            None,
            lengthscales.to_vec(),
            frequencies,
            weights,
        ))
    }

    fn from_parts(
        kind: FeatureKind,
        dim: usize,
        nodes_per_dim: Option<usize>,
        lengthscales: Vec<f64>,
        frequencies: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        let sqrt_weights = weights.iter().map(|w| w.sqrt()).collect();
        Self {
            kind,
            dim,
            nodes_per_dim,
            lengthscales,
            frequencies,
            weights,
            sqrt_weights,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_dim(&self) -> Option<usize> {
        self.nodes_per_dim
    }

    pub fn num_frequencies(&self) -> usize {
        self.weights.len()
    }

    /// Length of an embedding vector, `2 * num_frequencies()`.
    pub fn output_dim(&self) -> usize {
        2 * self.weights.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn frequency(&self, i: usize) -> &[f64] {
        &self.frequencies[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn embed(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has dimension {}, feature map expects {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cannot embed a non-finite point"));
        }
        let mut out = DVector::zeros(self.output_dim());
        for (i, (omega, sw)) in self
            .frequencies
            .chunks_exact(self.dim)
            .zip(&self.sqrt_weights)
            .enumerate()
        {
            let phase: f64 = omega.iter().zip(x).map(|(o, v)| o * v).sum();
            let (s, c) = phase.sin_cos();
            out[2 * i] = sw * c;
            out[2 * i + 1] = sw * s;
        }
        Ok(out)
    }

    /// Embeds every point as a row of the returned matrix.
    pub fn embed_rows(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut rows = DMatrix::zeros(points.len(), self.output_dim());
        for (r, p) in points.iter().enumerate() {
            rows.set_row(r, &self.embed(p)?.transpose());
        }
        Ok(rows)
    }

    /// The kernel this map approximates.
    pub fn kernel(&self) -> SeKernel {
        SeKernel::new(self.lengthscales.clone()).expect("lengthscales validated at construction")
    }

    /// Analytic QFF bound on `[0,1]^d`; `None` for random features.
    pub fn analytic_bound(&self) -> Option<f64> {
        let m = self.nodes_per_dim?;
        let nu = self
            .lengthscales
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Some(qff_error_bound(self.dim, m, nu))
    }
}

/// The approximate kernel `phi(x) . phi(y)` induced by a feature map.
impl crate::kernels::Kernel for FeatureMap {
    fn k(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (omega, w) in self.frequencies.chunks_exact(self.dim).zip(&self.weights) {
            let a: f64 = omega.iter().zip(x).map(|(o, v)| o * v).sum();
            let b: f64 = omega.iter().zip(y).map(|(o, v)| o * v).sum();
            acc += w * (a.cos() * b.cos() + a.sin() * b.sin());
        }
        acc
    }
}

/// Measured uniform approximation error of a feature map on a point grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxCertificate {
    /// `max_{x,y in grid} |k(x,y) - phi(x).phi(y)|`.
    pub measured: f64,
    /// Analytic QFF bound (stated for the unit cube), absent for RFF.
    pub bound: Option<f64>,
    pub grid_size: usize,
}

pub fn certify_uniform_error(
    map: &FeatureMap,
    kernel: &SeKernel,
    grid: &[Vec<f64>],
) -> Result<ApproxCertificate> {
    if grid.is_empty() {
        return Err(Error::invalid("certification grid is empty"));
    }
    if kernel.dim() != map.input_dim() {
        return Err(Error::invalid("kernel and feature map dimensions differ"));
    }
    let phi = map.embed_rows(grid)?;
    let approx = &phi * phi.transpose();
    let mut measured: f64 = 0.0;
    for i in 0..grid.len() {
        for j in 0..=i {
            let exact = kernel.eval_unchecked(&grid[i], &grid[j]);
            measured = measured.max((exact - approx[(i, j)]).abs());
        }
    }
    Ok(ApproxCertificate {
        measured,
        bound: map.analytic_bound(),
        grid_size: grid.len(),
    })
}

/// `n` equally spaced points on `[lo, hi]` (both ends included).
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Tensor grid with `per_axis` points on `[0,1]` in each of `d` dimensions.
pub fn unit_cube_grid(d: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let axis = linspace(0.0, 1.0, per_axis);
    tensor_grid(&vec![axis; d])
}

pub(crate) fn tensor_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}
