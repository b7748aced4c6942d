//! Complete binary tree of deterministic sum nodes with smoothed split weights.
//!
//! Nodes are stored breadth-first: node `pos` at `level` lives at index
//! `2^level - 1 + pos`, and node `k` has children `2k + 1` (bit 0) and
//! `2k + 2` (bit 1). Every node owns two unconstrained raw parameters
//! `(u0, u1)`; the unnormalized weights are `v = exp(u)` and the left weight is
//! the Laplace-smoothed ratio `(v0 + s) / (v0 + v1 + 2s)` with a per-level
//! strength `s`.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SplitTree {
    levels: u32,
    strength: Vec<f64>,
    raw: Vec<f64>,
    left: Vec<f64>,
    dleft: Vec<[f64; 2]>,
}

#[inline]
pub(crate) fn node_index(level: u32, pos: u64) -> usize {
    ((1u64 << level) - 1 + pos) as usize
}

/// Smoothed left weight and its partials with respect to `(u0, u1)`.
#[inline]
pub(crate) fn smoothed_left(u0: f64, u1: f64, strength: f64) -> (f64, [f64; 2]) {
    // Rescale by exp(-max) so large raw values cannot overflow.
    let m = u0.max(u1);
    let e0 = (u0 - m).exp();
    let e1 = (u1 - m).exp();
    let s = strength * (-m).exp();
    let denom = e0 + e1 + 2.0 * s;
    let w = (e0 + s) / denom;
    let d0 = e0 * (e1 + s) / (denom * denom);
    let d1 = -e1 * (e0 + s) / (denom * denom);
    (w, [d0, d1])
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

impl SplitTree {
    /// All-zero raw parameters (every split at one half).
    pub(crate) fn uniform(levels: u32, strength: Vec<f64>) -> Self {
        assert!(levels >= 1 && levels <= 30, "unsupported tree depth {levels}");
        assert_eq!(strength.len(), levels as usize);
        let n = (1usize << levels) - 1;
        let mut tree = Self {
            levels,
            strength,
            raw: vec![0.0; 2 * n],
            left: vec![0.5; n],
            dleft: vec![[0.0; 2]; n],
        };
        tree.refresh();
        tree
    }

    pub(crate) fn from_raw(levels: u32, strength: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let mut tree = Self::uniform(levels, strength);
        tree.set_raw(&raw)?;
        Ok(tree)
    }

    /// Draws each node's pre-smoothing left weight from `Beta(2^h, 2^h)`,
    /// where `h` is the node's height (leaves sit at height 0).
    pub(crate) fn init_beta<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for level in 0..self.levels {
            let height = (self.levels - level).min(30) as i32;
            let shape = 2f64.powi(height);
            let beta = Beta::new(shape, shape).expect("valid beta shape");
            for pos in 0..(1u64 << level) {
                let k = node_index(level, pos);
                let w: f64 = beta.sample(rng).clamp(1e-12, 1.0 - 1e-12);
                self.raw[2 * k] = w.ln();
                self.raw[2 * k + 1] = (1.0 - w).ln();
            }
        }
        self.refresh();
    }

    fn refresh(&mut self) {
        for k in 0..self.num_nodes() {
            let level = usize::BITS - (k + 1).leading_zeros() - 1;
            let (w, d) = smoothed_left(self.raw[2 * k], self.raw[2 * k + 1], self.strength[level as usize]);
            self.left[k] = w;
            self.dleft[k] = d;
        }
    }

    pub(crate) fn levels(&self) -> u32 {
        self.levels
    }

    pub(crate) fn num_nodes(&self) -> usize {
        self.left.len()
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub(crate) fn set_raw(&mut self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.raw.len() {
            return Err(Error::Shape {
                expected: self.raw.len(),
                got: raw.len(),
            });
        }
        if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("raw parameter {bad} is not finite")));
        }
        self.raw.copy_from_slice(raw);
        self.refresh();
        Ok(())
    }

    /// Sets raw parameters so the smoothed left weights equal `weights`.
    pub(crate) fn set_left_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.num_nodes() {
            return Err(Error::Shape {
                expected: self.num_nodes(),
                got: weights.len(),
            });
        }
        let mut raw = vec![0.0; self.raw.len()];
        for (k, &w) in weights.iter().enumerate() {
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::InvalidParam(format!("weight {w} not in (0, 1)")));
            }
            let level = usize::BITS - (k + 1).leading_zeros() - 1;
            let s = self.strength[level as usize];
            // Solve (v0 + s) / (v0 + v1 + 2s) = w for v0 with v1 large enough
            // that v0 stays positive.
            let v1 = (2.0 * s * (1.0 - 2.0 * w) / w + 1.0).max(1.0);
            let v0 = (w * (v1 + s) - s * (1.0 - w)) / (1.0 - w);
            raw[2 * k] = v0.ln();
            raw[2 * k + 1] = v1.ln();
        }
        self.set_raw(&raw)
    }

    #[inline]
    pub(crate) fn left(&self, k: usize) -> f64 {
        self.left[k]
    }

    #[inline]
    pub(crate) fn left_partials(&self, k: usize) -> [f64; 2] {
        self.dleft[k]
    }

    pub(crate) fn left_weights(&self) -> &[f64] {
        &self.left
    }

    /// Adds `dw * dwL/du` for node `k` into a raw-parameter gradient.
    #[inline]
    pub(crate) fn push_weight_grad(&self, k: usize, dw: f64, out: &mut Vec<(usize, f64)>) {
        let [d0, d1] = self.dleft[k];
        out.push((2 * k, dw * d0));
        out.push((2 * k + 1, dw * d1));
    }

    /// Reach probabilities of every node at `level` (level == levels gives leaves).
    pub(crate) fn level_masses(&self, level: u32) -> Vec<f64> {
        assert!(level <= self.levels);
        let mut masses = vec![1.0];
        for l in 0..level {
            let mut next = Vec::with_capacity(masses.len() * 2);
            for (pos, &m) in masses.iter().enumerate() {
                let w = self.left[node_index(l, pos as u64)];
                next.push(m * w);
                next.push(m * (1.0 - w));
            }
            masses = next;
        }
        masses
    }

    /// Per-node subtree entropies, bottom-up, with every leaf contributing
    /// `log_leaf_volume`.
    fn subtree_entropies(&self, log_leaf_volume: f64) -> Vec<f64> {
        let n = self.num_nodes();
        let mut h = vec![0.0; n];
        let child = |h: &[f64], c: usize| if c < n { h[c] } else { log_leaf_volume };
        for k in (0..n).rev() {
            let w = self.left[k];
            let r = 1.0 - w;
            h[k] = -xlogx(w) + w * child(&h, 2 * k + 1) - xlogx(r) + r * child(&h, 2 * k + 2);
        }
        h
    }

    pub(crate) fn entropy(&self, log_leaf_volume: f64) -> f64 {
        self.subtree_entropies(log_leaf_volume)[0]
    }

    /// Entropy, adding `scale * dH/draw` into `grad`.
    pub(crate) fn entropy_with_grad(&self, log_leaf_volume: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let n = self.num_nodes();
        assert_eq!(grad.len(), 2 * n);
        let h = self.subtree_entropies(log_leaf_volume);
        let child = |c: usize| if c < n { h[c] } else { log_leaf_volume };
        let mut reach = vec![0.0; n];
        reach[0] = 1.0;
        for k in 0..n {
            let w = self.left[k];
            let r = 1.0 - w;
            if 2 * k + 2 < n {
                reach[2 * k + 1] = reach[k] * w;
                reach[2 * k + 2] = reach[k] * r;
            }
            // d/dw of -w ln w - (1-w) ln(1-w) is ln((1-w)/w)
            let dlog = if w > 0.0 && r > 0.0 { (r / w).ln() } else { 0.0 };
            let dw = reach[k] * (dlog + child(2 * k + 1) - child(2 * k + 2));
            let [d0, d1] = self.dleft[k];
            grad[2 * k] += scale * dw * d0;
            grad[2 * k + 1] += scale * dw * d1;
        }
        h[0]
    }

    /// Keeps the top `levels` levels.
    pub(crate) fn truncated(&self, levels: u32, strength: Vec<f64>) -> Self {
        assert!(levels >= 1 && levels <= self.levels);
        let n = (1usize << levels) - 1;
        Self::from_raw(levels, strength, self.raw[..2 * n].to_vec()).expect("prefix of valid raw")
    }
}
