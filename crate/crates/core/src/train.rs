//! Monte Carlo ELBO, its gradient, Adam and the fit loop.
//!
//! The gradient of `E_q[log p(x)]` is pathwise: each sample `x = F^{-1}(u)`
//! is differentiated through the chain of local inverse-CDF moves and the
//! smoothing map, and multiplied by `∇ log p` at the (optionally quantized)
//! sample. The entropy and its gradient are exact.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::posterior::Variational;
use crate::targets::TargetDensity;

/// Relative finite-difference step for targets without an analytic gradient.
pub const TARGET_FD_STEP: f64 = 1e-5;

/// What the estimator needs to know about one ELBO evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboConfig {
    pub mc_samples: usize,
    /// Evaluate the target at the leaf representative (straight-through).
    pub quantize: bool,
    pub exec: ExecMode,
}

impl ElboConfig {
    pub fn new(mc_samples: usize) -> Self {
        Self {
            mc_samples,
            quantize: false,
            exec: ExecMode::default(),
        }
    }

    pub fn quantized(mut self, yes: bool) -> Self {
        self.quantize = yes;
        self
    }

    pub fn exec(mut self, mode: ExecMode) -> Self {
        self.exec = mode;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    pub entropy_term: f64,
    pub expected_logp_term: f64,
    /// `∂ELBO / ∂params`, aligned with [`Variational::params`].
    pub grad: Vec<f64>,
}

/// Draws `n * dims` uniforms sequentially, so the stream does not depend on
/// how the per-sample work is scheduled.
pub fn draw_uniforms<R: Rng + ?Sized>(rng: &mut R, n: usize, dims: usize) -> Vec<f64> {
    (0..n * dims).map(|_| rng.random::<f64>()).collect()
}

struct SampleEval {
    logp: f64,
    grad: Vec<(usize, f64)>,
}

fn target_gradient<T: TargetDensity + ?Sized>(
    target: &T,
    x: &mut [f64],
    ranges: &[(f64, f64)],
    grad: &mut [f64],
) {
    if target.gradient(x, grad) {
        return;
    }
    for d in 0..x.len() {
        let h = TARGET_FD_STEP * (ranges[d].1 - ranges[d].0);
        let x0 = x[d];
        x[d] = x0 + h;
        let up = target.log_density(x);
        x[d] = x0 - h;
        let down = target.log_density(x);
        x[d] = x0;
        grad[d] = (up - down) / (2.0 * h);
    }
}

fn check_finite(value: f64, sample: &[f64]) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            value,
            sample: sample.to_vec(),
        })
    }
}

fn eval_sample<Q, T>(q: &Q, target: &T, u: &[f64], quantize: bool, with_grad: bool) -> Result<SampleEval>
where
    Q: Variational + ?Sized,
    T: TargetDensity + ?Sized,
{
    let dims = q.dims();
    let mut x = vec![0.0; dims];
    let mut xq = vec![0.0; dims];
    q.reparam(u, &mut x, &mut xq);
    let point = if quantize { &mut xq } else { &mut x };
    let logp = target.log_density(point);
    check_finite(logp, point)?;
    let mut grad = Vec::new();
    if with_grad {
        let mut dlogp = vec![0.0; dims];
        target_gradient(target, point, &q.ranges(), &mut dlogp);
        if let Some(bad) = dlogp.iter().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                value: *bad,
                sample: point.clone(),
            });
        }
        q.reparam_grad(u, &dlogp, &mut grad);
    }
    Ok(SampleEval { logp, grad })
}

/// ELBO and gradient for a fixed set of uniforms (`u.len() == T * dims`).
pub fn elbo_with_uniforms<Q, T>(q: &Q, target: &T, u: &[f64], quantize: bool, mode: ExecMode) -> Result<ElboEstimate>
where
    Q: Variational + ?Sized,
    T: TargetDensity + ?Sized,
{
    let dims = q.dims();
    check_target_dims(dims, target.dims())?;
    let n = u.len() / dims;
    if n == 0 || u.len() != n * dims {
        return Err(Error::InvalidParam("need at least one complete uniform vector".into()));
    }
    let evals = exec::map_indexed(mode, n, |s| eval_sample(q, target, &u[s * dims..(s + 1) * dims], quantize, true));
    let mut logps = Vec::with_capacity(n);
    let mut grad = vec![0.0; q.num_params()];
    let scale = 1.0 / n as f64;
    for e in evals {
        let e = e?;
        logps.push(e.logp);
        for (i, g) in e.grad {
            grad[i] += scale * g;
        }
    }
    let expected_logp_term = exec::pairwise_sum(&logps) * scale;
    let entropy_term = q.entropy_with_grad(1.0, &mut grad);
    Ok(ElboEstimate {
        value: expected_logp_term + entropy_term,
        entropy_term,
        expected_logp_term,
        grad,
    })
}

/// Monte Carlo ELBO and its gradient.
pub fn elbo_estimate<Q, T, R>(q: &Q, target: &T, cfg: &ElboConfig, rng: &mut R) -> Result<ElboEstimate>
where
    Q: Variational + ?Sized,
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    if cfg.mc_samples == 0 {
        return Err(Error::InvalidParam("mc_samples must be at least 1".into()));
    }
    let u = draw_uniforms(rng, cfg.mc_samples, q.dims());
    elbo_with_uniforms(q, target, &u, cfg.quantize, cfg.exec)
}

/// `E_q[log p]` for fixed uniforms, without gradients.
pub fn expected_logp_with_uniforms<Q, T>(q: &Q, target: &T, u: &[f64], quantize: bool, mode: ExecMode) -> Result<f64>
where
    Q: Variational + ?Sized,
    T: TargetDensity + ?Sized,
{
    let dims = q.dims();
    check_target_dims(dims, target.dims())?;
    let n = u.len() / dims;
    if n == 0 || u.len() != n * dims {
        return Err(Error::InvalidParam("need at least one complete uniform vector".into()));
    }
    let logps = exec::map_indexed(mode, n, |s| {
        eval_sample(q, target, &u[s * dims..(s + 1) * dims], quantize, false).map(|e| e.logp)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(exec::pairwise_sum(&logps) / n as f64)
}

/// ELBO value only.
pub fn elbo_value<Q, T, R>(q: &Q, target: &T, cfg: &ElboConfig, rng: &mut R) -> Result<f64>
where
    Q: Variational + ?Sized,
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    if cfg.mc_samples == 0 {
        return Err(Error::InvalidParam("mc_samples must be at least 1".into()));
    }
    let u = draw_uniforms(rng, cfg.mc_samples, q.dims());
    Ok(expected_logp_with_uniforms(q, target, &u, cfg.quantize, cfg.exec)? + q.entropy())
}

fn check_target_dims(q: usize, p: usize) -> Result<()> {
    if q != p {
        return Err(Error::Shape { expected: q, got: p });
    }
    Ok(())
}

/// `KL(q || p) = -E_q[log p] - H(q)` for a normalized target.
///
/// Unnormalized targets are refused with [`Error::Unnormalized`], which
/// carries the `-ELBO` estimate instead.
pub fn reverse_kl<Q, T, R>(q: &Q, target: &T, n_samples: usize, mode: ExecMode, rng: &mut R) -> Result<f64>
where
    Q: Variational + ?Sized,
    T: TargetDensity + ?Sized,
    R: Rng + ?Sized,
{
    let cfg = ElboConfig::new(n_samples).exec(mode);
    let neg_elbo = -elbo_value(q, target, &cfg, rng)?;
    if target.is_normalized() {
        Ok(neg_elbo)
    } else {
        Err(Error::Unnormalized { neg_elbo })
    }
}

/// Options for [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub mc_samples: usize,
    /// Number of parameter coordinates compared.
    pub coordinates: usize,
    pub step: f64,
    /// Uniform draws are kept at least this far (in `u`) from any point where
    /// the sampled leaf changes.
    pub margin: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            mc_samples: 8,
            coordinates: 50,
            step: 1e-5,
            margin: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares the analytic ELBO gradient against central differences with
/// common random numbers. Quantization is off; draws near leaf boundaries
/// are rejected, and so are coordinates whose perturbation would move a
/// sample into a different leaf.
pub fn grad_check<Q, T>(q: &Q, target: &T, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    Q: Variational + Clone,
    T: TargetDensity + ?Sized,
{
    let dims = q.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let leaves = |q: &Q, u: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; dims];
        let mut xq = vec![0.0; dims];
        q.reparam(u, &mut x, &mut xq);
        xq
    };
    let mut u = Vec::with_capacity(cfg.mc_samples * dims);
    let mut attempts = 0;
    while u.len() < cfg.mc_samples * dims {
        attempts += 1;
        if attempts > 1000 * cfg.mc_samples.max(1) {
            return Err(Error::Domain("could not find draws away from leaf boundaries".into()));
        }
        let cand: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
        let base = leaves(q, &cand);
        let safe = (0..dims).all(|d| {
            [-cfg.margin, cfg.margin].iter().all(|&du| {
                let mut v = cand.clone();
                v[d] += du;
                (0.0..1.0).contains(&v[d]) && leaves(q, &v) == base
            })
        });
        if safe {
            u.extend(cand);
        }
    }
    let analytic = elbo_with_uniforms(q, target, &u, false, ExecMode::Sequential)?;
    let params = q.params();
    let value_at = |p: &[f64]| -> Result<(f64, bool)> {
        let mut qp = q.clone();
        qp.set_params(p)?;
        let same_path = u.chunks(dims).all(|ud| leaves(&qp, ud) == leaves(q, ud));
        let v = expected_logp_with_uniforms(&qp, target, &u, false, ExecMode::Sequential)? + qp.entropy();
        Ok((v, same_path))
    };
    let mut order: Vec<usize> = (0..params.len()).collect();
    // Partial Fisher-Yates: a random subset of coordinates in random order.
    for i in 0..order.len() {
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: Vec::new(),
        analytic: Vec::new(),
        numeric: Vec::new(),
    };
    for &i in &order {
        if report.coordinates.len() == cfg.coordinates {
            break;
        }
        let mut p = params.clone();
        p[i] = params[i] + cfg.step;
        let (up, same_up) = value_at(&p)?;
        p[i] = params[i] - cfg.step;
        let (down, same_down) = value_at(&p)?;
        if !(same_up && same_down) {
            continue;
        }
        let numeric = (up - down) / (2.0 * cfg.step);
        let a = analytic.grad[i];
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        report.coordinates.push(i);
        report.analytic.push(a);
        report.numeric.push(numeric);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step on a loss with gradient `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// A training objective: a (possibly minibatched) target per step and a
/// fixed target for validation.
pub trait Objective: Sync {
    type Target<'a>: TargetDensity
    where
        Self: 'a;

    fn target_dims(&self) -> usize;

    fn step_target<R: Rng + ?Sized>(&self, step: usize, rng: &mut R) -> Self::Target<'_>;

    fn validation_target(&self) -> Self::Target<'_>;
}

impl<T: TargetDensity> Objective for T {
    type Target<'a>
        = &'a T
    where
        T: 'a;

    fn target_dims(&self) -> usize {
        self.dims()
    }

    fn step_target<R: Rng + ?Sized>(&self, _step: usize, _rng: &mut R) -> &T {
        self
    }

    fn validation_target(&self) -> &T {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    /// Number of evaluations without improvement before stopping.
    pub patience: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_eval_every() -> usize {
    50
}
fn default_eval_samples() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// If set, the learning rate decays linearly to this value at `max_steps`.
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub quantize: bool,
    #[serde(default)]
    pub exec: ExecMode,
}

fn default_mc_samples() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_max_steps() -> usize {
    1000
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mc_samples: default_mc_samples(),
            learning_rate: default_learning_rate(),
            final_learning_rate: None,
            adam: AdamConfig::default(),
            max_steps: default_max_steps(),
            early_stop: None,
            seed: 0,
            quantize: false,
            exec: ExecMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if let Some(lr) = self.final_learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad("final_learning_rate must be non-negative");
            }
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam needs 0 <= beta < 1 and eps > 0");
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || es.eval_every == 0 || es.eval_samples == 0 {
                return bad("early_stop fields must be positive");
            }
        }
        Ok(())
    }

    pub fn elbo_config(&self) -> ElboConfig {
        ElboConfig {
            mc_samples: self.mc_samples,
            quantize: self.quantize,
            exec: self.exec,
        }
    }

    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.max_steps > 1 => {
                let t = step as f64 / (self.max_steps - 1) as f64;
                self.learning_rate + (end - self.learning_rate) * t
            }
            _ => self.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub elbo: f64,
    pub entropy: f64,
    pub expected_logp: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub validation_elbo: Option<f64>,
    /// Seconds since the start of the fit.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
}

impl TrainTrace {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let records = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Serialization(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records })
    }

    /// Trace with wall-clock times zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        t.records.iter_mut().for_each(|r| r.wall_time = 0.0);
        t
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub trace: TrainTrace,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub best_validation_elbo: Option<f64>,
    pub stopped_early: bool,
    /// Set when training was aborted; the trace ends at the failure.
    pub error: Option<Error>,
}

impl FitReport {
    pub fn into_result(self) -> Result<Self> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(self),
        }
    }
}

/// Seed offset for the validation stream, so validation draws never overlap
/// the training stream.
const VALIDATION_STREAM: u64 = 0x5eed_0f_7a1d;

/// Maximizes the ELBO with Adam. Returns the best-by-validation parameters
/// (when early stopping is configured) or the final ones, in `q`.
pub fn fit<Q, O>(q: &mut Q, objective: &O, cfg: &TrainConfig) -> Result<FitReport>
where
    Q: Variational + ?Sized,
    O: Objective + ?Sized,
{
    cfg.validate()?;
    check_target_dims(q.dims(), objective.target_dims())?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(q.num_params(), cfg.adam);
    let mut params = q.params();
    let elbo_cfg = cfg.elbo_config();
    let mut report = FitReport {
        trace: TrainTrace::default(),
        best_step: 0,
        best_validation_elbo: None,
        stopped_early: false,
        error: None,
    };
    let mut best_params = params.clone();
    let mut since_best = 0;
    let validation_u = cfg.early_stop.map(|es| {
        let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VALIDATION_STREAM);
        draw_uniforms(&mut vrng, es.eval_samples, q.dims())
    });
    for step in 0..cfg.max_steps {
        let target = objective.step_target(step, &mut rng);
        let est = match elbo_estimate(q, &target, &elbo_cfg, &mut rng) {
            Ok(e) if e.value.is_finite() => e,
            Ok(e) => {
                report.error = Some(Error::NonFinite {
                    value: e.value,
                    sample: Vec::new(),
                });
                break;
            }
            Err(e) => {
                report.error = Some(e);
                break;
            }
        };
        let grad_norm = est.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut record = TrainRecord {
            step,
            elbo: est.value,
            entropy: est.entropy_term,
            expected_logp: est.expected_logp_term,
            grad_norm,
            validation_elbo: None,
            wall_time: 0.0,
        };
        if let (Some(es), Some(vu)) = (cfg.early_stop, &validation_u) {
            if step % es.eval_every == 0 {
                let vt = objective.validation_target();
                match expected_logp_with_uniforms(q, &vt, vu, cfg.quantize, cfg.exec) {
                    Ok(v) if v.is_finite() => {
                        let val = v + est.entropy_term;
                        record.validation_elbo = Some(val);
                        if report.best_validation_elbo.is_none_or(|b| val > b) {
                            report.best_validation_elbo = Some(val);
                            report.best_step = step;
                            best_params.copy_from_slice(&params);
                            since_best = 0;
                        } else {
                            since_best += 1;
                        }
                    }
                    Ok(v) => {
                        report.error = Some(Error::NonFinite {
                            value: v,
                            sample: Vec::new(),
                        });
                    }
                    Err(e) => report.error = Some(e),
                }
            }
        }
        record.wall_time = start.elapsed().as_secs_f64();
        report.trace.records.push(record);
        if report.error.is_some() {
            break;
        }
        if cfg.early_stop.is_some_and(|es| since_best >= es.patience) {
            report.stopped_early = true;
            break;
        }
        let neg: Vec<f64> = est.grad.iter().map(|g| -g).collect();
        adam.step(&mut params, &neg, cfg.learning_rate_at(step));
        if let Err(e) = q.set_params(&params) {
            report.error = Some(e);
            break;
        }
    }
    if cfg.early_stop.is_some() && report.best_validation_elbo.is_some() {
        q.set_params(&best_params)?;
    } else {
        report.best_step = report.trace.records.len().saturating_sub(1);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step() {
        let mut adam = Adam::new(1, AdamConfig::default());
        let mut p = [0.0];
        adam.step(&mut p, &[1.0], 0.001);
        assert!((p[0] + 0.001).abs() < 1e-10);
        let mut q = [3.0];
        let mut adam = Adam::new(1, AdamConfig::default());
        adam.step(&mut q, &[0.0], 0.1);
        assert_eq!(q[0], 3.0);
    }

    #[test]
    fn adam_constant_gradient_limit() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = [0.0, 0.0];
        let mut prev = p;
        for _ in 0..5000 {
            prev = p;
            adam.step(&mut p, &[0.3, -7.0], 0.01);
        }
        assert!((p[0] - prev[0] + 0.01).abs() < 1e-6);
        assert!((p[1] - prev[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn config_validation_and_schedule() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.mc_samples = 0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            learning_rate: 0.1,
            final_learning_rate: Some(0.0),
            max_steps: 11,
            ..TrainConfig::default()
        };
        assert_eq!(c.learning_rate_at(0), 0.1);
        assert!((c.learning_rate_at(5) - 0.05).abs() < 1e-15);
        assert_eq!(c.learning_rate_at(10), 0.0);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.1}"#).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
