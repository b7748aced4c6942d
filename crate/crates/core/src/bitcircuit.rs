//! Univariate deterministic probabilistic circuit over a fixed-point format.
//!
//! The circuit is a complete binary tree of depth `B` whose sum node at
//! prefix `ε` splits its cell at the midpoint with weights `(w_ε0, w_ε1)`.
//! Leaves are uniform on their cell, so density, CDF, inverse CDF and entropy
//! are all closed-form walks over the tree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{Bitstring, FixedPointFormat};
use crate::hexfloat;
use crate::tree::{node_index, SplitTree};

/// Circuits are stored densely, so the bit budget is bounded.
pub const MAX_CIRCUIT_BITS: u32 = 24;

/// Depth schedule `α(j)` of the Laplace smoothing strength.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// `α(j) = j²`
    #[default]
    Quadratic,
    /// `α(j) = 2^j`
    Exponential,
}

/// Laplace smoothing of split weights: node at depth `j` adds `c·α(j + offset)`
/// pseudo-mass to both children.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SmoothingRepr")]
pub struct SmoothingSchedule {
    c: f64,
    alpha_rule: AlphaRule,
    #[serde(default)]
    depth_offset: u32,
}

#[derive(Deserialize)]
struct SmoothingRepr {
    c: f64,
    #[serde(default)]
    alpha_rule: AlphaRule,
    #[serde(default)]
    depth_offset: u32,
}

impl TryFrom<SmoothingRepr> for SmoothingSchedule {
    type Error = Error;
    fn try_from(r: SmoothingRepr) -> Result<Self> {
        Self::with_offset(r.c, r.alpha_rule, r.depth_offset)
    }
}

impl SmoothingSchedule {
    pub fn new(c: f64, alpha_rule: AlphaRule) -> Result<Self> {
        Self::with_offset(c, alpha_rule, 0)
    }

    pub fn with_offset(c: f64, alpha_rule: AlphaRule, depth_offset: u32) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParam(format!("smoothing constant must be > 0, got {c}")));
        }
        Ok(Self {
            c,
            alpha_rule,
            depth_offset,
        })
    }

    /// Quadratic schedule with constant `c`.
    pub fn quadratic(c: f64) -> Result<Self> {
        Self::new(c, AlphaRule::Quadratic)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha_rule(&self) -> AlphaRule {
        self.alpha_rule
    }

    pub fn depth_offset(&self) -> u32 {
        self.depth_offset
    }

    pub fn alpha(&self, depth: u32) -> f64 {
        let j = (depth + self.depth_offset) as f64;
        match self.alpha_rule {
            AlphaRule::Quadratic => j * j,
            AlphaRule::Exponential => j.exp2(),
        }
    }

    /// Pseudo-mass `c·α(depth)` added to each child.
    pub fn strength(&self, depth: u32) -> f64 {
        self.c * self.alpha(depth)
    }

    pub(crate) fn strengths(&self, depths: impl Iterator<Item = u32>) -> Vec<f64> {
        depths.map(|j| self.strength(j)).collect()
    }
}

impl Default for SmoothingSchedule {
    fn default() -> Self {
        Self {
            c: 0.1,
            alpha_rule: AlphaRule::Quadratic,
            depth_offset: 0,
        }
    }
}

/// One reparameterized draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    /// Inverse-CDF output.
    pub x: f64,
    /// Representable value of the visited leaf (its lower endpoint).
    pub quantized: f64,
    pub leaf: Bitstring,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BitCircuit {
    fmt: FixedPointFormat,
    smoothing: SmoothingSchedule,
    tree: SplitTree,
}

impl BitCircuit {
    /// Random circuit with node weights drawn from `Beta(2^h, 2^h)` by height.
    pub fn new(fmt: FixedPointFormat, smoothing: SmoothingSchedule, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(fmt, smoothing, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(
        fmt: FixedPointFormat,
        smoothing: SmoothingSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let mut c = Self::uniform(fmt, smoothing)?;
        c.tree.init_beta(rng);
        Ok(c)
    }

    /// Circuit with every split weight at one half (uniform on the range).
    pub fn uniform(fmt: FixedPointFormat, smoothing: SmoothingSchedule) -> Result<Self> {
        let bits = fmt.total_bits();
        if bits > MAX_CIRCUIT_BITS {
            return Err(Error::Format(format!(
                "circuits support at most {MAX_CIRCUIT_BITS} bits, {fmt} has {bits}"
            )));
        }
        let tree = SplitTree::uniform(bits, smoothing.strengths(0..bits));
        Ok(Self { fmt, smoothing, tree })
    }

    pub fn from_raw(fmt: FixedPointFormat, smoothing: SmoothingSchedule, raw: &[f64]) -> Result<Self> {
        let mut c = Self::uniform(fmt, smoothing)?;
        c.tree.set_raw(raw)?;
        Ok(c)
    }

    /// Circuit whose smoothed left weights (breadth-first) equal `weights`.
    pub fn from_left_weights(
        fmt: FixedPointFormat,
        smoothing: SmoothingSchedule,
        weights: &[f64],
    ) -> Result<Self> {
        let mut c = Self::uniform(fmt, smoothing)?;
        c.tree.set_left_weights(weights)?;
        Ok(c)
    }

    pub fn format(&self) -> FixedPointFormat {
        self.fmt
    }

    pub fn smoothing(&self) -> SmoothingSchedule {
        self.smoothing
    }

    pub fn depth(&self) -> u32 {
        self.fmt.total_bits()
    }

    pub fn num_nodes(&self) -> usize {
        self.tree.num_nodes()
    }

    /// Two raw parameters per internal node.
    pub fn num_params(&self) -> usize {
        2 * self.num_nodes()
    }

    /// Raw pre-weights `(u_ε0, u_ε1)` per node, breadth-first.
    pub fn raw(&self) -> &[f64] {
        self.tree.raw()
    }

    pub fn set_raw(&mut self, raw: &[f64]) -> Result<()> {
        self.tree.set_raw(raw)
    }

    /// Smoothed left weights, breadth-first.
    pub fn left_weights(&self) -> &[f64] {
        self.tree.left_weights()
    }

    /// `(w_ε0, w_ε1)` at the node addressed by `prefix`.
    pub fn weights(&self, prefix: Bitstring) -> Result<(f64, f64)> {
        if prefix.len() >= self.depth() {
            return Err(Error::Format(format!(
                "prefix of length {} does not address a sum node of a {}-bit circuit",
                prefix.len(),
                self.depth()
            )));
        }
        let w = self.tree.left(node_index(prefix.len(), prefix.value()));
        Ok((w, 1.0 - w))
    }

    pub fn leaf_width(&self) -> f64 {
        self.fmt.resolution()
    }

    /// Probability mass of every leaf cell in index order.
    pub fn leaf_masses(&self) -> Vec<f64> {
        self.tree.level_masses(self.depth())
    }

    /// Masses of the `2^depth` cells at `depth`.
    pub fn prefix_masses(&self, depth: u32) -> Result<Vec<f64>> {
        if depth > self.depth() {
            return Err(Error::Format(format!("depth {depth} exceeds circuit depth")));
        }
        Ok(self.tree.level_masses(depth))
    }

    /// Log density; `-inf` outside the representable range.
    pub fn log_density(&self, x: f64) -> f64 {
        let Ok(index) = self.fmt.encode_index(x) else {
            return f64::NEG_INFINITY;
        };
        let depth = self.depth();
        let mut k = 0usize;
        let mut logp = 0.0;
        for level in 0..depth {
            let w = self.tree.left(k);
            if (index >> (depth - 1 - level)) & 1 == 1 {
                logp += (1.0 - w).ln();
                k = 2 * k + 2;
            } else {
                logp += w.ln();
                k = 2 * k + 1;
            }
        }
        logp - self.leaf_width().ln()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// CDF, clamped to 0 below the range and 1 above it.
    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let (mut a, mut b) = (self.fmt.lo(), self.fmt.hi());
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        let mut acc = 0.0;
        let mut scale = 1.0;
        let mut k = 0usize;
        for _ in 0..self.depth() {
            let w = self.tree.left(k);
            let mid = 0.5 * (a + b);
            if x >= mid {
                acc += scale * w;
                scale *= 1.0 - w;
                a = mid;
                k = 2 * k + 2;
            } else {
                scale *= w;
                b = mid;
                k = 2 * k + 1;
            }
        }
        acc + scale * (x - a) / (b - a)
    }

    /// Inverse CDF and the bitstring of the visited leaf.
    pub fn inverse_cdf(&self, u: f64) -> Result<(f64, Bitstring)> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::Domain(format!("u = {u} is outside [0, 1)")));
        }
        Ok(self.inverse_cdf_unchecked(u))
    }

    pub(crate) fn inverse_cdf_unchecked(&self, mut u: f64) -> (f64, Bitstring) {
        let depth = self.depth();
        let mut k = 0usize;
        let mut index = 0u64;
        for _ in 0..depth {
            let w = self.tree.left(k);
            index <<= 1;
            if u < w {
                u /= w;
                k = 2 * k + 1;
            } else {
                u = (u - w) / (1.0 - w);
                index |= 1;
                k = 2 * k + 2;
            }
        }
        let (a, b) = self.fmt.cell_at(depth, index);
        let mut x = a + u.clamp(0.0, 1.0) * (b - a);
        if x >= b {
            x = b.next_down();
        }
        (x, Bitstring::from_parts(index, depth))
    }

    /// Pushes `upstream * ∂F⁻¹(u)/∂raw` for every node on the path of `u`,
    /// with parameter indices shifted by `offset`.
    pub(crate) fn inverse_cdf_grad(&self, u: f64, upstream: f64, offset: usize, out: &mut Vec<(usize, f64)>) {
        let depth = self.depth() as usize;
        let mut nodes = [0usize; MAX_CIRCUIT_BITS as usize];
        let mut du_dw = [0.0; MAX_CIRCUIT_BITS as usize];
        let mut du_du = [0.0; MAX_CIRCUIT_BITS as usize];
        let mut k = 0usize;
        let mut u = u;
        for level in 0..depth {
            let w = self.tree.left(k);
            nodes[level] = k;
            if u < w {
                u /= w;
                du_dw[level] = -u / w;
                du_du[level] = 1.0 / w;
                k = 2 * k + 1;
            } else {
                let r = 1.0 - w;
                u = (u - w) / r;
                du_dw[level] = -(1.0 - u) / r;
                du_du[level] = 1.0 / r;
                k = 2 * k + 2;
            }
        }
        let mut g = upstream * self.leaf_width();
        for level in (0..depth).rev() {
            let node = nodes[level];
            let [d0, d1] = self.tree.left_partials(node);
            let dw = g * du_dw[level];
            out.push((offset + 2 * node, dw * d0));
            out.push((offset + 2 * node + 1, dw * d1));
            g *= du_du[level];
        }
    }

    /// Draws `n` samples through the inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Draw> {
        (0..n)
            .map(|_| {
                let (x, leaf) = self.inverse_cdf_unchecked(rng.random::<f64>());
                Draw {
                    x,
                    quantized: self.fmt.decode_index(leaf.value()),
                    leaf,
                }
            })
            .collect()
    }

    /// Closed-form entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.tree.entropy(self.leaf_width().ln())
    }

    /// Entropy, adding `scale * dH/draw` into `grad[offset..]`.
    pub(crate) fn entropy_with_grad(&self, scale: f64, grad: &mut [f64]) -> f64 {
        self.tree.entropy_with_grad(self.leaf_width().ln(), scale, grad)
    }

    /// Exact marginalization to `frac_bits` fraction bits: nodes deeper than
    /// the new depth are replaced by uniform leaves on their cells.
    pub fn truncate(&self, frac_bits: u32) -> Result<Self> {
        if frac_bits > self.fmt.frac_bits() {
            return Err(Error::Format(format!(
                "cannot truncate {} to {frac_bits} fraction bits",
                self.fmt
            )));
        }
        let fmt = self.fmt.with_frac_bits(frac_bits)?;
        let depth = fmt.total_bits();
        let tree = self.tree.truncated(depth, self.smoothing.strengths(0..depth));
        Ok(Self {
            fmt,
            smoothing: self.smoothing,
            tree,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&CircuitDoc::from(self)).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CircuitDoc = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        doc.try_into()
    }
}

pub const CIRCUIT_DOC_VERSION: u32 = 1;

/// Versioned on-disk form of a circuit. Raw weights are hex floats so the
/// round trip is bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitDoc {
    pub version: u32,
    pub format: FixedPointFormat,
    pub smoothing: SmoothingSchedule,
    #[serde(with = "hexfloat::vec")]
    pub pre_weights: Vec<f64>,
}

impl From<&BitCircuit> for CircuitDoc {
    fn from(c: &BitCircuit) -> Self {
        Self {
            version: CIRCUIT_DOC_VERSION,
            format: c.fmt,
            smoothing: c.smoothing,
            pre_weights: c.raw().to_vec(),
        }
    }
}

impl TryFrom<CircuitDoc> for BitCircuit {
    type Error = Error;
    fn try_from(doc: CircuitDoc) -> Result<Self> {
        if doc.version != CIRCUIT_DOC_VERSION {
            return Err(Error::Serialization(format!("unsupported circuit version {}", doc.version)));
        }
        BitCircuit::from_raw(doc.format, doc.smoothing, &doc.pre_weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt(s: &str) -> FixedPointFormat {
        s.parse().unwrap()
    }

    fn smooth() -> SmoothingSchedule {
        SmoothingSchedule::quadratic(0.1).unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        let a = BitCircuit::new(fmt("s2i5f"), smooth(), 7).unwrap();
        let b = BitCircuit::new(fmt("s2i5f"), smooth(), 7).unwrap();
        let c = BitCircuit::new(fmt("s2i5f"), smooth(), 8).unwrap();
        assert_eq!(a.raw(), b.raw());
        assert_ne!(a.raw(), c.raw());
    }

    #[test]
    fn root_init_is_beta_two_two() {
        // Root of a 1-bit circuit has height 1: Beta(2, 2), mean 1/2, var 1/20.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let ws: Vec<f64> = (0..n)
            .map(|_| {
                let c = BitCircuit::with_rng(fmt("u1i0f"), smooth(), &mut rng).unwrap();
                c.left_weights()[0]
            })
            .collect();
        let mean = ws.iter().sum::<f64>() / n as f64;
        let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
        assert!((var - 0.05).abs() < 0.005, "{var}");
    }

    #[test]
    fn deep_nodes_init_closer_to_half() {
        // With the smoothing root exemption, compare raw pre-smoothing weights.
        let c = BitCircuit::new(fmt("u0i8f"), smooth(), 3).unwrap();
        let pre: Vec<f64> = c.raw().chunks(2).map(|r| r[0].exp()).collect();
        let var_at = |level: u32| {
            let start = (1usize << level) - 1;
            let xs = &pre[start..start + (1 << level)];
            xs.iter().map(|w| (w - 0.5).powi(2)).sum::<f64>() / xs.len() as f64
        };
        // root has height 8, the deepest level height 1
        assert!(var_at(0) < var_at(7));
        assert!(var_at(7) > 0.01);
    }

    #[test]
    fn weights_examples() {
        let c = BitCircuit::uniform(fmt("u1i2f"), smooth()).unwrap();
        assert_eq!(c.weights(Bitstring::EMPTY).unwrap(), (0.5, 0.5));
        assert!(c.weights("010".parse().unwrap()).is_err());
        // v0 = 3, v1 = 1 at depth 2 with c = 0.1: (3 + 0.4) / (4 + 0.8)
        let mut raw = vec![0.0; c.num_params()];
        let k = node_index(2, 0);
        raw[2 * k] = 3f64.ln();
        let c = BitCircuit::from_raw(fmt("u1i2f"), smooth(), &raw).unwrap();
        let (wl, wr) = c.weights("00".parse().unwrap()).unwrap();
        assert!((wl - 3.4 / 4.8).abs() < 1e-15);
        assert!((wl + wr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn heavy_smoothing_pulls_to_half() {
        let mut raw = vec![0.0; 14];
        raw[2] = 5.0;
        let strong = SmoothingSchedule::quadratic(1e9).unwrap();
        let c = BitCircuit::from_raw(fmt("u0i3f"), strong, &raw).unwrap();
        assert!((c.left_weights()[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn uniform_density() {
        let c = BitCircuit::uniform(fmt("u0i6f"), smooth()).unwrap();
        for x in [0.0, 0.3, 0.999] {
            assert!(c.log_density(x).abs() < 1e-12);
        }
        let c = BitCircuit::uniform(fmt("u1i2f"), smooth()).unwrap();
        assert!((c.density(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(c.log_density(2.0), f64::NEG_INFINITY);
        assert_eq!(c.log_density(-0.1), f64::NEG_INFINITY);
    }

    #[test]
    fn cdf_and_inverse_hand_examples() {
        let c = BitCircuit::from_left_weights(fmt("u0i1f"), smooth(), &[0.25]).unwrap();
        assert!((c.cdf(0.5) - 0.25).abs() < 1e-15);
        assert!((c.cdf(0.75) - 0.625).abs() < 1e-15);
        assert_eq!(c.cdf(-1.0), 0.0);
        assert_eq!(c.cdf(1.0), 1.0);
        let (x, leaf) = c.inverse_cdf(0.5).unwrap();
        assert!((x - (0.5 + 0.5 / 3.0)).abs() < 1e-15);
        assert_eq!(leaf.to_string(), "1");
        // boundary routes right
        let (x, leaf) = c.inverse_cdf(0.25).unwrap();
        assert_eq!((x, leaf.to_string().as_str()), (0.5, "1"));
        assert!(c.inverse_cdf(1.0).is_err());
        assert!(c.inverse_cdf(-0.1).is_err());
    }

    #[test]
    fn uniform_inverse_is_identity() {
        let c = BitCircuit::uniform(fmt("u0i10f"), smooth()).unwrap();
        for u in [0.0, 0.1, 0.5, 0.73, 0.999] {
            assert!((c.inverse_cdf(u).unwrap().0 - u).abs() < 1e-15);
            assert!((c.cdf(u) - u).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_zero_and_uniform_mean() {
        let c = BitCircuit::uniform(fmt("u0i8f"), smooth()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(c.sample(&mut rng, 0).is_empty());
        let draws = c.sample(&mut rng, 100_000);
        let mean = draws.iter().map(|d| d.x).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.005);
        for d in &draws[..100] {
            assert_eq!(c.format().encode(d.x).unwrap(), d.leaf);
            assert_eq!(c.format().decode(d.leaf).unwrap(), d.quantized);
        }
    }

    #[test]
    fn entropy_known_values() {
        let c = BitCircuit::uniform(fmt("u0i5f"), smooth()).unwrap();
        assert!(c.entropy().abs() < 1e-12);
        let c = BitCircuit::uniform(fmt("u1i4f"), smooth()).unwrap();
        assert!((c.entropy() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn truncate_identity_and_errors() {
        let c = BitCircuit::new(fmt("s2i5f"), smooth(), 11).unwrap();
        assert_eq!(c.truncate(5).unwrap(), c);
        assert!(c.truncate(6).is_err());
        let tiny = BitCircuit::new(fmt("u0i2f"), smooth(), 1).unwrap();
        assert!(tiny.truncate(0).is_err());
        assert_eq!(tiny.truncate(1).unwrap().depth(), 1);
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let c = BitCircuit::new(fmt("s1i3f"), SmoothingSchedule::new(0.37, AlphaRule::Exponential).unwrap(), 5).unwrap();
        let s = c.to_json().unwrap();
        assert!(s.contains("\"format\": \"s1i3f\""));
        let back = BitCircuit::from_json(&s).unwrap();
        assert_eq!(back, c);
        assert!(BitCircuit::from_json(&s.replace("\"version\": 1", "\"version\": 9")).is_err());
    }

    #[test]
    fn too_deep_circuits_are_rejected() {
        assert!(BitCircuit::uniform(fmt("u0i25f"), smooth()).is_err());
    }

    #[test]
    fn smoothing_schedule_validation() {
        assert!(SmoothingSchedule::quadratic(0.0).is_err());
        assert!(SmoothingSchedule::quadratic(-1.0).is_err());
        let s = SmoothingSchedule::with_offset(0.5, AlphaRule::Exponential, 1).unwrap();
        assert_eq!(s.alpha(0), 2.0);
        assert_eq!(s.strength(2), 4.0);
        assert!(serde_json::from_str::<SmoothingSchedule>(r#"{"c": 0.0}"#).is_err());
        let s: SmoothingSchedule = serde_json::from_str(r#"{"c": 0.1}"#).unwrap();
        assert_eq!(s, SmoothingSchedule::default());
    }
}
