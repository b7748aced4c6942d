//! Bayesian MLP for binary classification.
//!
//! The network is `affine -> layernorm -> activation` twice followed by an
//! affine map to one logit. All weights, biases and (optional) layernorm
//! gains/biases live in one flat vector and get independent `N(0, 1)` priors. Gradients
//! are computed by hand-written backpropagation.

use std::borrow::Cow;
use std::io::{Read, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::posterior::Variational;
use crate::targets::{normal_logpdf, TargetDensity};
use crate::train::{draw_uniforms, Objective};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
        }
    }

    /// Derivative given the input `a` and output `h`.
    #[inline]
    fn deriv(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn default_true() -> bool {
    true
}

/// Two-hidden-layer MLP with a single output logit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: [usize; 2],
    #[serde(default = "default_true")]
    pub layernorm: bool,
    /// Learned per-unit gain and bias after normalization. Ignored without
    /// `layernorm`.
    #[serde(default = "default_true")]
    pub layernorm_affine: bool,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    w: [usize; 3],
    b: [usize; 3],
    gain: [usize; 2],
    bias: [usize; 2],
    total: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: [usize; 2]) -> Result<Self> {
        let spec = Self {
            input,
            hidden,
            layernorm: true,
            layernorm_affine: true,
            activation: Activation::Tanh,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParam("layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// `[in, h1, h2, 1]`.
    pub fn sizes(&self) -> [usize; 4] {
        [self.input, self.hidden[0], self.hidden[1], 1]
    }

    fn affine(&self) -> bool {
        self.layernorm && self.layernorm_affine
    }

    fn layout(&self) -> Layout {
        let s = self.sizes();
        let mut off = 0;
        let mut w = [0; 3];
        let mut b = [0; 3];
        let mut gain = [0; 2];
        let mut bias = [0; 2];
        for l in 0..3 {
            w[l] = off;
            off += s[l] * s[l + 1];
            b[l] = off;
            off += s[l + 1];
            if l < 2 && self.affine() {
                gain[l] = off;
                off += s[l + 1];
                bias[l] = off;
                off += s[l + 1];
            }
        }
        Layout {
            w,
            b,
            gain,
            bias,
            total: off,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }

    fn check(&self, weights: &[f64], x: &[f64]) -> Result<()> {
        if weights.len() != self.num_params() {
            return Err(Error::Shape {
                expected: self.num_params(),
                got: weights.len(),
            });
        }
        if x.len() != self.input {
            return Err(Error::Shape {
                expected: self.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, weights: &[f64], x: &[f64]) -> Result<f64> {
        self.check(weights, x)?;
        Ok(self.run(weights, x, &mut Cache::default(), &self.layout()))
    }

    /// Adds `dlogit * ∂logit/∂weights` into `grad`; returns the logit.
    pub fn backward(&self, weights: &[f64], x: &[f64], dlogit: f64, grad: &mut [f64]) -> Result<f64> {
        self.check(weights, x)?;
        if grad.len() != weights.len() {
            return Err(Error::Shape {
                expected: weights.len(),
                got: grad.len(),
            });
        }
        let layout = self.layout();
        let mut cache = Cache::default();
        let logit = self.run(weights, x, &mut cache, &layout);
        self.backprop(weights, x, dlogit, grad, &cache, &layout);
        Ok(logit)
    }

    fn run(&self, w: &[f64], x: &[f64], c: &mut Cache, l: &Layout) -> f64 {
        let s = self.sizes();
        let mut input: Cow<[f64]> = Cow::Borrowed(x);
        for layer in 0..2 {
            let (fan_in, fan_out) = (s[layer], s[layer + 1]);
            let hc = &mut c.hidden[layer];
            hc.a.clear();
            for o in 0..fan_out {
                let row = &w[l.w[layer] + o * fan_in..l.w[layer] + (o + 1) * fan_in];
                let dot: f64 = row.iter().zip(input.iter()).map(|(a, b)| a * b).sum();
                hc.a.push(dot + w[l.b[layer] + o]);
            }
            hc.xhat.clear();
            hc.h.clear();
            if self.layernorm {
                let n = fan_out as f64;
                let mean = hc.a.iter().sum::<f64>() / n;
                let var = hc.a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                hc.sigma = (var + LN_EPS).sqrt();
                for o in 0..fan_out {
                    let xh = (hc.a[o] - mean) / hc.sigma;
                    hc.xhat.push(xh);
                    let z = if self.affine() {
                        w[l.gain[layer] + o] * xh + w[l.bias[layer] + o]
                    } else {
                        xh
                    };
                    hc.h.push(self.activation.apply(z));
                }
            } else {
                for o in 0..fan_out {
                    hc.h.push(self.activation.apply(hc.a[o]));
                }
            }
            input = Cow::Owned(hc.h.clone());
        }
        let last = &c.hidden[1].h;
        let dot: f64 = w[l.w[2]..l.w[2] + s[2]].iter().zip(last).map(|(a, b)| a * b).sum();
        dot + w[l.b[2]]
    }

    fn backprop(&self, w: &[f64], x: &[f64], dlogit: f64, grad: &mut [f64], c: &Cache, l: &Layout) {
        let s = self.sizes();
        // Output layer.
        let mut dh: Vec<f64> = (0..s[2]).map(|i| dlogit * w[l.w[2] + i]).collect();
        for i in 0..s[2] {
            grad[l.w[2] + i] += dlogit * c.hidden[1].h[i];
        }
        grad[l.b[2]] += dlogit;
        for layer in (0..2).rev() {
            let (fan_in, fan_out) = (s[layer], s[layer + 1]);
            let hc = &c.hidden[layer];
            let mut da = vec![0.0; fan_out];
            if self.layernorm {
                let mut dxhat = vec![0.0; fan_out];
                for o in 0..fan_out {
                    if self.affine() {
                        let z = w[l.gain[layer] + o] * hc.xhat[o] + w[l.bias[layer] + o];
                        let dz = dh[o] * self.activation.deriv(z, hc.h[o]);
                        grad[l.gain[layer] + o] += dz * hc.xhat[o];
                        grad[l.bias[layer] + o] += dz;
                        dxhat[o] = dz * w[l.gain[layer] + o];
                    } else {
                        dxhat[o] = dh[o] * self.activation.deriv(hc.xhat[o], hc.h[o]);
                    }
                }
                let n = fan_out as f64;
                let mean_d = dxhat.iter().sum::<f64>() / n;
                let mean_dx = dxhat.iter().zip(&hc.xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                for o in 0..fan_out {
                    da[o] = (dxhat[o] - mean_d - hc.xhat[o] * mean_dx) / hc.sigma;
                }
            } else {
                for o in 0..fan_out {
                    da[o] = dh[o] * self.activation.deriv(hc.a[o], hc.h[o]);
                }
            }
            let input: &[f64] = if layer == 0 { x } else { &c.hidden[0].h };
            let mut dinput = vec![0.0; fan_in];
            for o in 0..fan_out {
                let base = l.w[layer] + o * fan_in;
                for i in 0..fan_in {
                    grad[base + i] += da[o] * input[i];
                    dinput[i] += da[o] * w[base + i];
                }
                grad[l.b[layer] + o] += da[o];
            }
            dh = dinput;
        }
    }
}

#[derive(Default)]
struct HiddenCache {
    a: Vec<f64>,
    xhat: Vec<f64>,
    sigma: f64,
    h: Vec<f64>,
}

#[derive(Default)]
struct Cache {
    hidden: [HiddenCache; 2],
}

#[inline]
pub fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(l: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p()
}

/// `log p(y | logit)` for a Bernoulli with a sigmoid link.
#[inline]
pub fn bernoulli_loglik(logit: f64, y: f64) -> f64 {
    y * logit - softplus(logit)
}

/// One split of a binary classification dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub dims: usize,
    /// Row-major `n x dims`.
    pub inputs: Vec<f64>,
    /// `0.0` or `1.0`.
    pub labels: Vec<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dims..(i + 1) * self.dims]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Serialization(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dims).map(|d| format!("x{d}")).collect();
        header.push("y".into());
        w.write_record(&header).map_err(io)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(f64::to_string).collect();
            rec.push((self.labels[i] as u8).to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Reads `x1..xd,y` with a header row.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let io = |e: csv::Error| Error::Serialization(e.to_string());
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(io)?.clone();
        if headers.len() < 2 || &headers[headers.len() - 1] != "y" {
            return Err(Error::Serialization("expected header x1..xd,y".into()));
        }
        let dims = headers.len() - 1;
        let mut split = Split {
            dims,
            ..Split::default()
        };
        for rec in r.records() {
            let rec = rec.map_err(io)?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Serialization(format!("bad number {field:?}")))?;
                if j < dims {
                    split.inputs.push(v);
                } else if v == 0.0 || v == 1.0 {
                    split.labels.push(v);
                } else {
                    return Err(Error::Serialization(format!("label {v} is not 0 or 1")));
                }
            }
        }
        Ok(split)
    }

    fn standardize(&mut self, stats: &[(f64, f64)]) {
        for row in self.inputs.chunks_mut(self.dims) {
            for (v, &(m, s)) in row.iter_mut().zip(stats) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Train/validation/test splits, standardized with training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    /// Per-feature `(mean, std)` that was removed.
    pub standardization: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn from_raw(mut train: Split, mut val: Split, mut test: Split) -> Result<Self> {
        let d = train.dims;
        if train.is_empty() || val.dims != d || test.dims != d {
            return Err(Error::InvalidParam("splits must be non-empty and share their dimension".into()));
        }
        let n = train.len() as f64;
        let stats: Vec<(f64, f64)> = (0..d)
            .map(|j| {
                let mean = (0..train.len()).map(|i| train.row(i)[j]).sum::<f64>() / n;
                let var = (0..train.len()).map(|i| (train.row(i)[j] - mean).powi(2)).sum::<f64>() / n;
                (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
            })
            .collect();
        train.standardize(&stats);
        val.standardize(&stats);
        test.standardize(&stats);
        Ok(Self {
            train,
            val,
            test,
            standardization: stats,
        })
    }

    pub fn dims(&self) -> usize {
        self.train.dims
    }

    /// Maps raw coordinates into the standardized input space.
    pub fn standardize_point(&self, x: &mut [f64]) {
        for (v, &(m, s)) in x.iter_mut().zip(&self.standardization) {
            *v = (*v - m) / s;
        }
    }

    pub fn unstandardize_point(&self, x: &mut [f64]) {
        for (v, &(m, s)) in x.iter_mut().zip(&self.standardization) {
            *v = *v * s + m;
        }
    }
}

fn default_moons_train() -> usize {
    1024
}
fn default_moons_val() -> usize {
    256
}
fn default_moons_test() -> usize {
    512
}
fn default_moons_noise() -> f64 {
    0.1
}
fn default_banana_train() -> usize {
    2048
}
fn default_banana_eval() -> usize {
    512
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        #[serde(default = "default_moons_train")]
        n_train: usize,
        #[serde(default = "default_moons_val")]
        n_val: usize,
        #[serde(default = "default_moons_test")]
        n_test: usize,
        #[serde(default = "default_moons_noise")]
        noise: f64,
    },
    BananaClf {
        #[serde(default = "default_banana_train")]
        n_train: usize,
        #[serde(default = "default_banana_eval")]
        n_val: usize,
        #[serde(default = "default_banana_eval")]
        n_test: usize,
    },
    /// Three CSV files with columns `x1..xd,y`.
    Csv { train: String, val: String, test: String },
}

impl DatasetSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        let json = format!("{{\"name\": {name:?}}}");
        serde_json::from_str(&json).map_err(|_| Error::InvalidParam(format!("unknown dataset {name:?}")))
    }
}

/// Two interleaving half circles. Class 0: `(cos t, sin t)`; class 1:
/// `(1 - cos t, 0.5 - sin t)`, with `t ~ U(0, π)` and isotropic Gaussian
/// noise of standard deviation `noise`. Classes are exactly balanced.
pub fn two_moons<R: Rng + ?Sized>(n: usize, noise: f64, rng: &mut R) -> Split {
    let mut rows: Vec<([f64; 2], f64)> = (0..n)
        .map(|i| {
            let t = rng.random::<f64>() * std::f64::consts::PI;
            let (s, c) = t.sin_cos();
            if i % 2 == 0 {
                ([c, s], 0.0)
            } else {
                ([1.0 - c, 0.5 - s], 1.0)
            }
        })
        .collect();
    for (p, _) in rows.iter_mut() {
        for v in p.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += noise * e;
        }
    }
    rows.shuffle(rng);
    Split {
        dims: 2,
        inputs: rows.iter().flat_map(|(p, _)| *p).collect(),
        labels: rows.iter().map(|(_, y)| *y).collect(),
    }
}

/// Banana-shaped class 1 around a class-0 blob. With `z1, z2, e ~ N(0, 1)`:
/// class 1 is `(1.2 z1, 0.6 z1^2 - 1.2 + 0.3 e)`, class 0 is
/// `(0.6 z1, 0.4 + 0.5 z2)`. Classes are exactly balanced.
pub fn banana_clf<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Split {
    let mut rows: Vec<([f64; 2], f64)> = (0..n)
        .map(|i| {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            if i % 2 == 0 {
                ([0.6 * z1, 0.4 + 0.5 * z2], 0.0)
            } else {
                ([1.2 * z1, 0.6 * z1 * z1 - 1.2 + 0.3 * z2], 1.0)
            }
        })
        .collect();
    rows.shuffle(rng);
    Split {
        dims: 2,
        inputs: rows.iter().flat_map(|(p, _)| *p).collect(),
        labels: rows.iter().map(|(_, y)| *y).collect(),
    }
}

/// Builds a dataset; each split uses its own stream derived from `seed`.
pub fn make_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k + 1);
        r
    };
    match spec {
        &DatasetSpec::TwoMoons {
            n_train,
            n_val,
            n_test,
            noise,
        } => {
            if !(noise >= 0.0 && noise.is_finite()) {
                return Err(Error::InvalidParam("noise must be non-negative".into()));
            }
            check_sizes(n_train, n_val, n_test)?;
            Dataset::from_raw(
                two_moons(n_train, noise, &mut stream(0)),
                two_moons(n_val, noise, &mut stream(1)),
                two_moons(n_test, noise, &mut stream(2)),
            )
        }
        &DatasetSpec::BananaClf { n_train, n_val, n_test } => {
            check_sizes(n_train, n_val, n_test)?;
            Dataset::from_raw(
                banana_clf(n_train, &mut stream(0)),
                banana_clf(n_val, &mut stream(1)),
                banana_clf(n_test, &mut stream(2)),
            )
        }
        DatasetSpec::Csv { train, val, test } => {
            let read = |p: &str| -> Result<Split> {
                let f = std::fs::File::open(p).map_err(|e| Error::Serialization(format!("{p}: {e}")))?;
                Split::read_csv(f)
            };
            Dataset::from_raw(read(train)?, read(val)?, read(test)?)
        }
    }
}

fn check_sizes(n_train: usize, n_val: usize, n_test: usize) -> Result<()> {
    if n_train < 2 || n_val < 1 || n_test < 1 {
        return Err(Error::InvalidParam("dataset splits are too small".into()));
    }
    Ok(())
}

/// `scale * Σ_batch log p(y | x, w) + Σ log N(w; 0, 1)`.
pub fn log_joint(spec: &MlpSpec, split: &Split, weights: &[f64], batch: &[usize], scale: f64) -> Result<f64> {
    let mut ll = 0.0;
    for &i in batch {
        ll += bernoulli_loglik(spec.forward(weights, split.row(i))?, split.labels[i]);
    }
    Ok(scale * ll + log_prior(weights))
}

/// Log-joint and its gradient (written into `grad`).
pub fn log_joint_grad(
    spec: &MlpSpec,
    split: &Split,
    weights: &[f64],
    batch: &[usize],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    grad.iter_mut().zip(weights).for_each(|(g, w)| *g = -w);
    let mut ll = 0.0;
    for &i in batch {
        let x = split.row(i);
        let y = split.labels[i];
        let logit = spec.forward(weights, x)?;
        ll += bernoulli_loglik(logit, y);
        spec.backward(weights, x, scale * (y - sigmoid(logit)), grad)?;
    }
    Ok(scale * ll + log_prior(weights))
}

pub fn log_prior(weights: &[f64]) -> f64 {
    weights.iter().map(|&w| normal_logpdf(w, 0.0, 1.0)).sum()
}

/// Posterior log-density over the weights, restricted to a batch.
pub struct BatchTarget<'a> {
    pub spec: &'a MlpSpec,
    pub split: &'a Split,
    pub batch: Cow<'a, [usize]>,
    pub scale: f64,
    pub domain: (f64, f64),
}

impl TargetDensity for BatchTarget<'_> {
    fn dims(&self) -> usize {
        self.spec.num_params()
    }

    fn log_density(&self, w: &[f64]) -> f64 {
        log_joint(self.spec, self.split, w, &self.batch, self.scale).unwrap_or(f64::NAN)
    }

    fn gradient(&self, w: &[f64], grad: &mut [f64]) -> bool {
        if log_joint_grad(self.spec, self.split, w, &self.batch, self.scale, grad).is_err() {
            grad.iter_mut().for_each(|g| *g = f64::NAN);
        }
        true
    }

    fn recommended_domain(&self) -> Vec<(f64, f64)> {
        vec![self.domain; self.dims()]
    }
}

/// Minibatched BNN posterior as a training objective. Every step uses a
/// fresh batch drawn without replacement from the training split, scaled by
/// `N / |batch|`; validation uses the whole validation split with the same
/// overall scale.
pub struct BnnObjective<'a> {
    pub spec: MlpSpec,
    pub data: &'a Dataset,
    pub batch_size: usize,
    pub domain: (f64, f64),
    all_val: Vec<usize>,
}

impl<'a> BnnObjective<'a> {
    pub fn new(spec: MlpSpec, data: &'a Dataset, batch_size: usize, domain: (f64, f64)) -> Result<Self> {
        spec.validate()?;
        if spec.input != data.dims() {
            return Err(Error::Shape {
                expected: spec.input,
                got: data.dims(),
            });
        }
        if batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be at least 1".into()));
        }
        Ok(Self {
            spec,
            data,
            batch_size,
            domain,
            all_val: (0..data.val.len()).collect(),
        })
    }
}

impl Objective for BnnObjective<'_> {
    type Target<'b>
        = BatchTarget<'b>
    where
        Self: 'b;

    fn target_dims(&self) -> usize {
        self.spec.num_params()
    }

    fn step_target<R: Rng + ?Sized>(&self, _step: usize, rng: &mut R) -> BatchTarget<'_> {
        let n = self.data.train.len();
        let b = self.batch_size.min(n);
        let mut batch = index::sample(rng, n, b).into_vec();
        batch.sort_unstable();
        BatchTarget {
            spec: &self.spec,
            split: &self.data.train,
            batch: Cow::Owned(batch),
            scale: n as f64 / b as f64,
            domain: self.domain,
        }
    }

    fn validation_target(&self) -> BatchTarget<'_> {
        BatchTarget {
            spec: &self.spec,
            split: &self.data.val,
            batch: Cow::Borrowed(&self.all_val),
            scale: self.data.train.len() as f64 / self.data.val.len() as f64,
            domain: self.domain,
        }
    }
}

/// Posterior predictive `p(y = 1 | x)` averaged over `samples` quantized
/// weight draws. `inputs` is row-major with `spec.input` columns.
pub fn predictive<Q, R>(
    q: &Q,
    spec: &MlpSpec,
    inputs: &[f64],
    samples: usize,
    mode: ExecMode,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    Q: Variational + ?Sized,
    R: Rng + ?Sized,
{
    let p = spec.num_params();
    if q.dims() != p {
        return Err(Error::Shape {
            expected: p,
            got: q.dims(),
        });
    }
    if samples == 0 || inputs.len() % spec.input != 0 {
        return Err(Error::InvalidParam("need samples >= 1 and whole input rows".into()));
    }
    let n = inputs.len() / spec.input;
    let u = draw_uniforms(rng, samples, p);
    let per_sample = exec::map_indexed(mode, samples, |s| -> Result<Vec<f64>> {
        let mut x = vec![0.0; p];
        let mut w = vec![0.0; p];
        q.reparam(&u[s * p..(s + 1) * p], &mut x, &mut w);
        inputs
            .chunks(spec.input)
            .map(|row| spec.forward(&w, row).map(sigmoid))
            .collect()
    });
    let mut probs = vec![0.0; n];
    for ps in per_sample {
        for (acc, v) in probs.iter_mut().zip(ps?) {
            *acc += v;
        }
    }
    probs.iter_mut().for_each(|v| *v /= samples as f64);
    Ok(probs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nlpd: f64,
    pub accuracy: f64,
    pub ece: f64,
}

pub const PROB_CLAMP: f64 = 1e-7;
pub const ECE_BINS: usize = 10;

/// NLPD (probabilities clamped to `[1e-7, 1 - 1e-7]`), accuracy at the 0.5
/// threshold, and ECE over 10 equal-width confidence bins.
pub fn metrics(probs: &[f64], labels: &[f64]) -> Result<Metrics> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Shape {
            expected: labels.len(),
            got: probs.len(),
        });
    }
    let n = probs.len() as f64;
    let mut nlpd = 0.0;
    let mut correct = 0.0;
    let mut bin_count = [0.0; ECE_BINS];
    let mut bin_conf = [0.0; ECE_BINS];
    let mut bin_acc = [0.0; ECE_BINS];
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        nlpd -= if y == 1.0 { pc.ln() } else { (1.0 - pc).ln() };
        let pred = if p > 0.5 { 1.0 } else { 0.0 };
        let hit = if pred == y { 1.0 } else { 0.0 };
        correct += hit;
        let conf = p.max(1.0 - p);
        let b = ((conf * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        bin_count[b] += 1.0;
        bin_conf[b] += conf;
        bin_acc[b] += hit;
    }
    let ece = (0..ECE_BINS)
        .filter(|&b| bin_count[b] > 0.0)
        .map(|b| (bin_acc[b] - bin_conf[b]).abs() / n)
        .sum();
    Ok(Metrics {
        nlpd: nlpd / n,
        accuracy: correct / n,
        ece,
    })
}
