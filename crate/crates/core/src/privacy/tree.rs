use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tree_depth;
use crate::error::{Error, Result};

/// Binary-tree aggregation of `(m+1) x (m+1)` blocks over `T` leaves.
///
/// Level 0 holds the leaves; the node `(level, pos)` covers leaves
/// `[pos * 2^level, (pos + 1) * 2^level)`. Each node carries the sum of the data inserted
/// below it plus one symmetric Gaussian noise block, drawn the first time the node is
/// touched from a stream keyed by `(seed, node)`. A prefix over the first `c` leaves is
/// answered from the dyadic decomposition of `c`, one node per set bit.
///
/// Nodes are dropped once their parent is complete, since no later prefix reads them.
#[derive(Debug, Clone)]
pub struct NoisyTree {
    horizon: usize,
    depth: usize,
    block_dim: usize,
    sigma: f64,
    seed: u64,
    inserted: usize,
    nodes: HashMap<(usize, usize), DMatrix<f64>>,
}

/// Result of a prefix query.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSum {
    /// Full noisy `(m+1) x (m+1)` block.
    pub block: DMatrix<f64>,
    /// Number of tree nodes summed.
    pub nodes_read: usize,
}

impl PrefixSum {
    /// Top-left `m x m` block.
    pub fn sigma(&self) -> DMatrix<f64> {
        let m = self.block.nrows() - 1;
        self.block.view((0, 0), (m, m)).into_owned()
    }

    /// First `m` entries of the last column.
    pub fn u(&self) -> DVector<f64> {
        let m = self.block.nrows() - 1;
        self.block.view((0, m), (m, 1)).column(0).into_owned()
    }
}

impl NoisyTree {
    pub fn new(horizon: usize, block_dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        if horizon == 0 || block_dim == 0 {
            return Err(Error::invalid(
                "tree needs at least one leaf and a non-empty block",
            ));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise scale must be non-negative, got {sigma}"
            )));
        }
        Ok(Self {
            horizon,
            depth: tree_depth(horizon),
            block_dim,
            sigma,
            seed,
            inserted: 0,
            nodes: HashMap::new(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    /// Number of nodes currently held in memory.
    pub fn live_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// The symmetric noise block `(1/sqrt 2)(Y + Y^T) * sigma` of a node.
    pub fn node_noise(&self, level: usize, pos: usize) -> DMatrix<f64> {
        let k = self.block_dim;
        if self.sigma == 0.0 {
            return DMatrix::zeros(k, k);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(((level as u64) << 48) | pos as u64);
        let raw = DMatrix::<f64>::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
        (&raw + raw.transpose()) * (self.sigma / std::f64::consts::SQRT_2)
    }

    /// Inserts the datum of round `t` (1-based); rounds must arrive in order.
    /// Returns the number of nodes whose sums changed.
    pub fn insert(&mut self, t: usize, datum: &DMatrix<f64>) -> Result<usize> {
        let k = self.block_dim;
        if datum.shape() != (k, k) {
            return Err(Error::invalid(format!(
                "datum is {:?}, tree blocks are {k}x{k}",
                datum.shape()
            )));
        }
        self.check_insert(t)?;
        Ok(self.add_along_path(|node| *node += datum))
    }

    /// Inserts the rank-one datum `v v^T` for round `t`.
    pub fn insert_outer(&mut self, t: usize, v: &DVector<f64>) -> Result<usize> {
        if v.len() != self.block_dim {
            return Err(Error::invalid(format!(
                "vector has length {}, tree blocks are {}",
                v.len(),
                self.block_dim
            )));
        }
        self.check_insert(t)?;
        Ok(self.add_along_path(|node| node.ger(1.0, v, v, 1.0)))
    }

    fn check_insert(&self, t: usize) -> Result<()> {
        if t != self.inserted + 1 {
            return Err(Error::InvalidState(format!(
                "expected round {} next, got {t}",
                self.inserted + 1
            )));
        }
        if t > self.horizon {
            return Err(Error::InvalidState(format!(
                "round {t} exceeds the horizon {}",
                self.horizon
            )));
        }
        Ok(())
    }

    fn add_along_path(&mut self, add: impl Fn(&mut DMatrix<f64>)) -> usize {
        let leaf = self.inserted;
        for level in 0..self.depth {
            let key = (level, leaf >> level);
            if !self.nodes.contains_key(&key) {
                let noise = self.node_noise(key.0, key.1);
                self.nodes.insert(key, noise);
            }
            add(self.nodes.get_mut(&key).expect("node just ensured"));
        }
        self.inserted += 1;
        // completed parents make their children unreachable
        for level in 1..self.depth {
            if (leaf + 1).is_multiple_of(1 << level) {
                let pos = leaf >> level;
                self.nodes.remove(&(level - 1, 2 * pos));
                self.nodes.remove(&(level - 1, 2 * pos + 1));
            }
        }
        self.depth
    }

    /// Noisy sum of the data of rounds `1..t-1`.
    ///
    /// Nodes whose parent is complete are dropped, so only queries for the next round
    /// (`t = inserted + 1`) or for rounds whose covering nodes are still live succeed.
    pub fn prefix(&self, t: usize) -> Result<PrefixSum> {
        if t == 0 || t > self.horizon {
            return Err(Error::invalid(format!(
                "prefix round {t} outside 1..={}",
                self.horizon
            )));
        }
        let count = t - 1;
        if count > self.inserted {
            return Err(Error::InvalidState(format!(
                "prefix at round {t} needs {count} inserted rounds, have {}",
                self.inserted
            )));
        }
        let k = self.block_dim;
        let mut block = DMatrix::zeros(k, k);
        let mut nodes_read = 0;
        let mut start = 0usize;
        for level in (0..self.depth).rev() {
            if count & (1 << level) != 0 {
                let node = self.nodes.get(&(level, start >> level)).ok_or_else(|| {
                    Error::InvalidState(format!("node ({level}, {}) missing", start >> level))
                })?;
                block += node;
                nodes_read += 1;
                start += 1 << level;
            }
        }
        Ok(PrefixSum { block, nodes_read })
    }
}
