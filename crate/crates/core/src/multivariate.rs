//! Multivariate variational families.
//!
//! [`MeanFieldPosterior`] is a product of independent [`BitCircuit`]s.
//! [`JointTreeCircuit`] is a single deterministic circuit of depth `B·D` whose
//! levels split the box along the axes in round-robin order, so each leaf is
//! a hyper-rectangle and all dependencies between dimensions can be modeled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitcircuit::{BitCircuit, CircuitDoc, SmoothingSchedule};
use crate::error::{Error, Result};
use crate::fixedpoint::{Bitstring, FixedPointFormat};
use crate::hexfloat;
use crate::posterior::{check_unit_box, Variational};
use crate::tree::SplitTree;

/// Upper bound on `B·D` for the joint tree (it stores `2^(B·D)` nodes).
pub const MAX_JOINT_LEVELS: u32 = 24;

/// One multivariate draw.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiDraw {
    pub x: Vec<f64>,
    pub quantized: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldPosterior {
    circuits: Vec<BitCircuit>,
    offsets: Vec<usize>,
}

impl MeanFieldPosterior {
    pub fn from_circuits(circuits: Vec<BitCircuit>) -> Result<Self> {
        if circuits.is_empty() {
            return Err(Error::InvalidParam("mean-field posterior needs at least one dimension".into()));
        }
        let mut offsets = Vec::with_capacity(circuits.len() + 1);
        let mut total = 0;
        for c in &circuits {
            offsets.push(total);
            total += c.num_params();
        }
        offsets.push(total);
        Ok(Self { circuits, offsets })
    }

    /// Beta-initialized factors drawn from one seeded stream.
    pub fn new(formats: &[FixedPointFormat], smoothing: SmoothingSchedule, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let circuits = formats
            .iter()
            .map(|&f| BitCircuit::with_rng(f, smoothing, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_circuits(circuits)
    }

    pub fn uniform(formats: &[FixedPointFormat], smoothing: SmoothingSchedule) -> Result<Self> {
        let circuits = formats
            .iter()
            .map(|&f| BitCircuit::uniform(f, smoothing))
            .collect::<Result<Vec<_>>>()?;
        Self::from_circuits(circuits)
    }

    pub fn circuits(&self) -> &[BitCircuit] {
        &self.circuits
    }

    pub fn circuit(&self, d: usize) -> &BitCircuit {
        &self.circuits[d]
    }

    pub fn checked_log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        Ok(self.log_density(x))
    }

    pub fn inverse_cdf_per_dim(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<Bitstring>)> {
        check_unit_box(u, self.dims())?;
        Ok(self
            .circuits
            .iter()
            .zip(u)
            .map(|(c, &ud)| c.inverse_cdf_unchecked(ud))
            .unzip())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<MultiDraw> {
        sample_with(self, rng, n)
    }

    /// Truncates every factor to `frac_bits` fraction bits.
    pub fn truncate(&self, frac_bits: u32) -> Result<Self> {
        let circuits = self
            .circuits
            .iter()
            .map(|c| c.truncate(frac_bits))
            .collect::<Result<Vec<_>>>()?;
        Self::from_circuits(circuits)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.dims() {
            return Err(Error::Shape {
                expected: self.dims(),
                got,
            });
        }
        Ok(())
    }
}

fn sample_with<V: Variational + ?Sized, R: Rng + ?Sized>(q: &V, rng: &mut R, n: usize) -> Vec<MultiDraw> {
    let d = q.dims();
    let mut u = vec![0.0; d];
    (0..n)
        .map(|_| {
            u.iter_mut().for_each(|v| *v = rng.random::<f64>());
            let mut draw = MultiDraw {
                x: vec![0.0; d],
                quantized: vec![0.0; d],
            };
            q.reparam(&u, &mut draw.x, &mut draw.quantized);
            draw
        })
        .collect()
}

impl Variational for MeanFieldPosterior {
    fn dims(&self) -> usize {
        self.circuits.len()
    }

    fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn params(&self) -> Vec<f64> {
        self.circuits.iter().flat_map(|c| c.raw().iter().copied()).collect()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.check_params_len(params.len())?;
        for (d, c) in self.circuits.iter_mut().enumerate() {
            c.set_raw(&params[self.offsets[d]..self.offsets[d + 1]])?;
        }
        Ok(())
    }

    fn ranges(&self) -> Vec<(f64, f64)> {
        self.circuits
            .iter()
            .map(|c| (c.format().lo(), c.format().hi()))
            .collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dims());
        self.circuits.iter().zip(x).map(|(c, &xd)| c.log_density(xd)).sum()
    }

    fn entropy(&self) -> f64 {
        self.circuits.iter().map(BitCircuit::entropy).sum()
    }

    fn entropy_with_grad(&self, scale: f64, grad: &mut [f64]) -> f64 {
        self.circuits
            .iter()
            .enumerate()
            .map(|(d, c)| c.entropy_with_grad(scale, &mut grad[self.offsets[d]..self.offsets[d + 1]]))
            .sum()
    }

    fn reparam(&self, u: &[f64], x: &mut [f64], quantized: &mut [f64]) {
        for (d, c) in self.circuits.iter().enumerate() {
            let (xd, leaf) = c.inverse_cdf_unchecked(u[d]);
            x[d] = xd;
            quantized[d] = c.format().decode_index(leaf.value());
        }
    }

    fn reparam_grad(&self, u: &[f64], upstream: &[f64], out: &mut Vec<(usize, f64)>) {
        for (d, c) in self.circuits.iter().enumerate() {
            if upstream[d] != 0.0 {
                c.inverse_cdf_grad(u[d], upstream[d], self.offsets[d], out);
            }
        }
    }
}

impl MeanFieldPosterior {
    fn check_params_len(&self, got: usize) -> Result<()> {
        if got != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                got,
            });
        }
        Ok(())
    }
}

/// Single deterministic circuit over the interleaved bits of all dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTreeCircuit {
    formats: Vec<FixedPointFormat>,
    axis_order: Vec<usize>,
    smoothing: SmoothingSchedule,
    bits: u32,
    tree: SplitTree,
}

impl JointTreeCircuit {
    /// All splits at one half. `axis_order` defaults to `0, 1, …, D−1`.
    pub fn uniform(
        formats: &[FixedPointFormat],
        axis_order: Option<Vec<usize>>,
        smoothing: SmoothingSchedule,
    ) -> Result<Self> {
        let dims = formats.len();
        if dims == 0 {
            return Err(Error::InvalidParam("joint tree needs at least one dimension".into()));
        }
        let bits = formats[0].total_bits();
        if formats.iter().any(|f| f.total_bits() != bits) {
            return Err(Error::Format("joint tree needs the same bit budget in every dimension".into()));
        }
        let levels = bits * dims as u32;
        if levels > MAX_JOINT_LEVELS {
            return Err(Error::Format(format!(
                "joint tree over {dims} x {bits} bits exceeds {MAX_JOINT_LEVELS} levels; use mean-field"
            )));
        }
        let axis_order = axis_order.unwrap_or_else(|| (0..dims).collect());
        let mut seen = vec![false; dims];
        if axis_order.len() != dims || !axis_order.iter().all(|&a| a < dims && !std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidParam(format!(
                "axis order {axis_order:?} is not a permutation of 0..{dims}"
            )));
        }
        let strength = smoothing.strengths((0..levels).map(|l| l / dims as u32));
        Ok(Self {
            formats: formats.to_vec(),
            axis_order,
            smoothing,
            bits,
            tree: SplitTree::uniform(levels, strength),
        })
    }

    pub fn new(
        formats: &[FixedPointFormat],
        axis_order: Option<Vec<usize>>,
        smoothing: SmoothingSchedule,
        seed: u64,
    ) -> Result<Self> {
        let mut jt = Self::uniform(formats, axis_order, smoothing)?;
        jt.tree.init_beta(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(jt)
    }

    pub fn from_left_weights(
        formats: &[FixedPointFormat],
        axis_order: Option<Vec<usize>>,
        smoothing: SmoothingSchedule,
        weights: &[f64],
    ) -> Result<Self> {
        let mut jt = Self::uniform(formats, axis_order, smoothing)?;
        jt.tree.set_left_weights(weights)?;
        Ok(jt)
    }

    pub fn formats(&self) -> &[FixedPointFormat] {
        &self.formats
    }

    pub fn axis_order(&self) -> &[usize] {
        &self.axis_order
    }

    pub fn smoothing(&self) -> SmoothingSchedule {
        self.smoothing
    }

    /// Bits per dimension.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Tree depth `B·D`.
    pub fn levels(&self) -> u32 {
        self.tree.levels()
    }

    pub fn num_nodes(&self) -> usize {
        self.tree.num_nodes()
    }

    /// Axis split at `level`.
    pub fn axis(&self, level: u32) -> usize {
        self.axis_order[level as usize % self.formats.len()]
    }

    pub fn left_weights(&self) -> &[f64] {
        self.tree.left_weights()
    }

    pub fn leaf_volume(&self) -> f64 {
        self.formats.iter().map(FixedPointFormat::resolution).product()
    }

    /// Mass of every leaf box, indexed by the leaf's path bits.
    pub fn leaf_masses(&self) -> Vec<f64> {
        self.tree.level_masses(self.levels())
    }

    /// Box `[a_d, b_d)` per dimension for a path prefix.
    pub fn leaf_box(&self, path: Bitstring) -> Result<Vec<(f64, f64)>> {
        if path.len() > self.levels() {
            return Err(Error::Format("path longer than the tree".into()));
        }
        let mut bounds: Vec<(f64, f64)> = self.formats.iter().map(|f| (f.lo(), f.hi())).collect();
        for level in 0..path.len() {
            let (a, b) = &mut bounds[self.axis(level)];
            let mid = 0.5 * (*a + *b);
            if path.bit(level) {
                *a = mid;
            } else {
                *b = mid;
            }
        }
        Ok(bounds)
    }

    pub fn joint_log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.formats.len() {
            return Err(Error::Shape {
                expected: self.formats.len(),
                got: x.len(),
            });
        }
        Ok(self.log_density(x))
    }

    /// Inverse tree-CDF: axis-aligned local moves down the tree.
    pub fn inverse_tree_cdf(&self, u: &[f64]) -> Result<(Vec<f64>, Bitstring)> {
        check_unit_box(u, self.formats.len())?;
        let mut x = vec![0.0; u.len()];
        let mut q = vec![0.0; u.len()];
        let leaf = self.descend(u, &mut x, &mut q);
        Ok((x, leaf))
    }

    pub fn joint_entropy(&self) -> f64 {
        self.tree.entropy(self.leaf_volume().ln())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<MultiDraw> {
        sample_with(self, rng, n)
    }

    fn descend(&self, u: &[f64], x: &mut [f64], quantized: &mut [f64]) -> Bitstring {
        let dims = self.formats.len();
        let mut u_loc = [0.0; MAX_JOINT_LEVELS as usize];
        let mut lo = [0.0; MAX_JOINT_LEVELS as usize];
        let mut hi = [0.0; MAX_JOINT_LEVELS as usize];
        for d in 0..dims {
            u_loc[d] = u[d];
            lo[d] = self.formats[d].lo();
            hi[d] = self.formats[d].hi();
        }
        let mut k = 0usize;
        let mut path = 0u64;
        for level in 0..self.levels() {
            let d = self.axis(level);
            let w = self.tree.left(k);
            let mid = 0.5 * (lo[d] + hi[d]);
            path <<= 1;
            if u_loc[d] < w {
                u_loc[d] /= w;
                hi[d] = mid;
                k = 2 * k + 1;
            } else {
                u_loc[d] = (u_loc[d] - w) / (1.0 - w);
                lo[d] = mid;
                path |= 1;
                k = 2 * k + 2;
            }
        }
        for d in 0..dims {
            let mut xd = lo[d] + u_loc[d].clamp(0.0, 1.0) * (hi[d] - lo[d]);
            if xd >= hi[d] {
                xd = hi[d].next_down();
            }
            x[d] = xd;
            quantized[d] = lo[d];
        }
        Bitstring::from_parts(path, self.levels())
    }
}

impl Variational for JointTreeCircuit {
    fn dims(&self) -> usize {
        self.formats.len()
    }

    fn num_params(&self) -> usize {
        self.tree.raw().len()
    }

    fn params(&self) -> Vec<f64> {
        self.tree.raw().to_vec()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.tree.set_raw(params)
    }

    fn ranges(&self) -> Vec<(f64, f64)> {
        self.formats.iter().map(|f| (f.lo(), f.hi())).collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dims());
        if !self.formats.iter().zip(x).all(|(f, &xd)| f.contains(xd)) {
            return f64::NEG_INFINITY;
        }
        let mut lo: Vec<f64> = self.formats.iter().map(FixedPointFormat::lo).collect();
        let mut hi: Vec<f64> = self.formats.iter().map(FixedPointFormat::hi).collect();
        let mut k = 0usize;
        let mut logp = 0.0;
        for level in 0..self.levels() {
            let d = self.axis(level);
            let w = self.tree.left(k);
            let mid = 0.5 * (lo[d] + hi[d]);
            if x[d] >= mid {
                logp += (1.0 - w).ln();
                lo[d] = mid;
                k = 2 * k + 2;
            } else {
                logp += w.ln();
                hi[d] = mid;
                k = 2 * k + 1;
            }
        }
        logp - self.leaf_volume().ln()
    }

    fn entropy(&self) -> f64 {
        self.joint_entropy()
    }

    fn entropy_with_grad(&self, scale: f64, grad: &mut [f64]) -> f64 {
        self.tree.entropy_with_grad(self.leaf_volume().ln(), scale, grad)
    }

    fn reparam(&self, u: &[f64], x: &mut [f64], quantized: &mut [f64]) {
        self.descend(u, x, quantized);
    }

    fn reparam_grad(&self, u: &[f64], upstream: &[f64], out: &mut Vec<(usize, f64)>) {
        let dims = self.formats.len();
        let levels = self.levels() as usize;
        let mut u_loc = [0.0; MAX_JOINT_LEVELS as usize];
        u_loc[..dims].copy_from_slice(u);
        let mut nodes = [0usize; MAX_JOINT_LEVELS as usize];
        let mut du_dw = [0.0; MAX_JOINT_LEVELS as usize];
        let mut du_du = [0.0; MAX_JOINT_LEVELS as usize];
        let mut k = 0usize;
        for level in 0..levels {
            let d = self.axis(level as u32);
            let w = self.tree.left(k);
            nodes[level] = k;
            if u_loc[d] < w {
                u_loc[d] /= w;
                du_dw[level] = -u_loc[d] / w;
                du_du[level] = 1.0 / w;
                k = 2 * k + 1;
            } else {
                let r = 1.0 - w;
                u_loc[d] = (u_loc[d] - w) / r;
                du_dw[level] = -(1.0 - u_loc[d]) / r;
                du_du[level] = 1.0 / r;
                k = 2 * k + 2;
            }
        }
        // Each coordinate only sees the chain of moves along its own axis.
        let mut g = [0.0; MAX_JOINT_LEVELS as usize];
        for d in 0..dims {
            g[d] = upstream[d] * self.formats[d].resolution();
        }
        for level in (0..levels).rev() {
            let d = self.axis(level as u32);
            if g[d] != 0.0 {
                self.tree.push_weight_grad(nodes[level], g[d] * du_dw[level], out);
            }
            g[d] *= du_du[level];
        }
    }
}

pub const JOINT_DOC_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldDoc {
    pub version: u32,
    pub dims: usize,
    pub circuits: Vec<CircuitDoc>,
}

impl From<&MeanFieldPosterior> for MeanFieldDoc {
    fn from(p: &MeanFieldPosterior) -> Self {
        Self {
            version: JOINT_DOC_VERSION,
            dims: p.dims(),
            circuits: p.circuits.iter().map(CircuitDoc::from).collect(),
        }
    }
}

impl TryFrom<MeanFieldDoc> for MeanFieldPosterior {
    type Error = Error;
    fn try_from(doc: MeanFieldDoc) -> Result<Self> {
        if doc.version != JOINT_DOC_VERSION {
            return Err(Error::Serialization(format!("unsupported version {}", doc.version)));
        }
        if doc.dims != doc.circuits.len() {
            return Err(Error::Serialization(format!(
                "dims = {} but {} circuits present",
                doc.dims,
                doc.circuits.len()
            )));
        }
        let circuits = doc
            .circuits
            .into_iter()
            .map(BitCircuit::try_from)
            .collect::<Result<Vec<_>>>()?;
        Self::from_circuits(circuits)
    }
}

/// Circuit document extended with the dimension count and split order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointTreeDoc {
    pub version: u32,
    pub dims: usize,
    pub axis_order: Vec<usize>,
    pub formats: Vec<FixedPointFormat>,
    pub smoothing: SmoothingSchedule,
    #[serde(with = "hexfloat::vec")]
    pub pre_weights: Vec<f64>,
}

impl From<&JointTreeCircuit> for JointTreeDoc {
    fn from(j: &JointTreeCircuit) -> Self {
        Self {
            version: JOINT_DOC_VERSION,
            dims: j.dims(),
            axis_order: j.axis_order.clone(),
            formats: j.formats.clone(),
            smoothing: j.smoothing,
            pre_weights: j.params(),
        }
    }
}

impl TryFrom<JointTreeDoc> for JointTreeCircuit {
    type Error = Error;
    fn try_from(doc: JointTreeDoc) -> Result<Self> {
        if doc.version != JOINT_DOC_VERSION {
            return Err(Error::Serialization(format!("unsupported version {}", doc.version)));
        }
        if doc.dims != doc.formats.len() {
            return Err(Error::Serialization("dims does not match formats".into()));
        }
        let mut jt = Self::uniform(&doc.formats, Some(doc.axis_order), doc.smoothing)?;
        jt.set_params(&doc.pre_weights)?;
        Ok(jt)
    }
}
