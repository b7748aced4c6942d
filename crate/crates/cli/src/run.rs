//! Experiment drivers. Each writes its artifacts into the resolved output
//! directory and returns the metrics it wrote to `metrics.json`.

use std::fs;
use std::path::{Path, PathBuf};

use bitvi::bnn::{self, make_dataset, predictive, BnnObjective, Dataset, MlpSpec};
use bitvi::targets::{grid_eval, grid_eval_fn, TargetSpec};
use bitvi::train::{fit, reverse_kl, FitReport};
use bitvi::{
    Error, ExecMode, FixedPointFormat, JointTreeCircuit, MeanFieldPosterior, Posterior, TargetDensity, Variational,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::error::{CliError, CliResult};

/// Offsets that separate the evaluation streams from the training stream.
const KL_STREAM: u64 = 0x6b1_0e7a;
const PREDICTIVE_STREAM: u64 = 0x9e3d_1c7e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMetrics {
    pub target: String,
    pub dims: usize,
    pub formats: Vec<FixedPointFormat>,
    pub family: Family,
    pub num_params: usize,
    pub steps: usize,
    pub best_step: usize,
    pub stopped_early: bool,
    /// Last training estimate.
    pub final_elbo: f64,
    /// Exact entropy of the fitted circuit.
    pub entropy: f64,
    /// Fresh Monte Carlo ELBO estimate.
    pub elbo: f64,
    /// `None` for unnormalized targets.
    pub reverse_kl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnnMetrics {
    pub format: FixedPointFormat,
    pub num_params: usize,
    pub steps: usize,
    pub best_step: usize,
    pub stopped_early: bool,
    pub final_elbo: f64,
    pub entropy: f64,
    pub validation: bnn::Metrics,
    pub test: bnn::Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub sigma: f64,
    pub bits: u32,
    pub entropy: f64,
    pub final_elbo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub sigma: f64,
    pub entropies: Vec<f64>,
    /// No entropy rises by more than 0.01 from one bit count to the next.
    pub non_increasing: bool,
    /// First bit count from which every further increment is below the
    /// plateau tolerance.
    pub plateau_onset: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMetrics {
    pub bits: Vec<u32>,
    pub entries: Vec<AblationEntry>,
    pub per_sigma: Vec<SigmaSummary>,
    /// Plateau onsets never move earlier as sigma shrinks.
    pub onset_ordered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChopRow {
    pub bits: u32,
    pub frac_bits: u32,
    pub nlpd: f64,
    pub accuracy: f64,
    pub ece: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChopMetrics {
    pub source_format: FixedPointFormat,
    pub rows: Vec<ChopRow>,
    pub spot_checked: Vec<usize>,
    /// Largest gap between a truncated leaf mass and the original prefix mass.
    pub prefix_mass_max_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum RunMetrics {
    FitDensity(DensityMetrics),
    FitBnn(BnnMetrics),
    AblateBits(AblationMetrics),
    Chop(ChopMetrics),
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn from_json(s: &str) -> CliResult<Self> {
        serde_json::from_str(s).map_err(|e| CliError::Io(e.to_string()))
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs a resolved config (see [`ExperimentConfig::resolve`]).
pub fn run(cfg: &ExperimentConfig) -> CliResult<RunMetrics> {
    let dir: PathBuf = cfg
        .out()
        .ok_or_else(|| CliError::Config("no output directory".into()))?
        .to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write(&dir, "resolved_config.json", &cfg.to_json())?;
    let metrics = match cfg {
        ExperimentConfig::FitDensity(c) => RunMetrics::FitDensity(fit_density(c, &dir)?),
        ExperimentConfig::FitBnn(c) => RunMetrics::FitBnn(fit_bnn(c, &dir)?),
        ExperimentConfig::AblateBits(c) => RunMetrics::AblateBits(ablate_bits(c, &dir)?),
        ExperimentConfig::Chop(c) => RunMetrics::Chop(chop(c, &dir)?),
    };
    write(&dir, "metrics.json", &metrics.to_json())?;
    Ok(metrics)
}

fn build_posterior(p: &PosteriorConfig, formats: &[FixedPointFormat], seed: u64) -> CliResult<Posterior> {
    Ok(match p.family {
        Family::MeanField => MeanFieldPosterior::new(formats, p.smoothing, seed)?.into(),
        Family::Joint => JointTreeCircuit::new(formats, p.axis_order.clone(), p.smoothing, seed)?.into(),
    })
}

/// Writes the trace and turns an aborted fit into an error.
fn finish_fit(report: &FitReport, dir: Option<&Path>) -> CliResult<()> {
    if let Some(dir) = dir {
        write(dir, "trace.jsonl", &report.trace.to_jsonl())?;
    }
    match &report.error {
        Some(e @ Error::NonFinite { .. }) => Err(CliError::Numerical(format!(
            "training aborted after {} steps: {e}",
            report.trace.records.len()
        ))),
        Some(e) => Err(e.clone().into()),
        None => Ok(()),
    }
}

fn last_elbo(report: &FitReport) -> f64 {
    report.trace.last().map_or(f64::NAN, |r| r.elbo)
}

fn fit_density(c: &FitDensityConfig, dir: &Path) -> CliResult<DensityMetrics> {
    let target = c.target.build()?;
    let dims = target.dims();
    let formats = c.posterior.format.expand(dims)?;
    let mut q = build_posterior(&c.posterior, &formats, c.seed)?;
    let report = fit(&mut q, &target, &c.train)?;
    finish_fit(&report, Some(dir))?;
    write(dir, "posterior.json", &(q.to_json()? + "\n"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ KL_STREAM);
    let (elbo, kl) = match reverse_kl(&q, &target, c.eval.kl_samples, c.train.exec, &mut rng) {
        Ok(kl) => (-kl, Some(kl)),
        Err(Error::Unnormalized { neg_elbo }) => (-neg_elbo, None),
        Err(e) => return Err(e.into()),
    };
    if dims <= 2 {
        let domain = q.ranges();
        let res = c.eval.grid_resolution;
        write(dir, "target_grid.csv", &grid_eval(&target, res, &domain)?.to_csv_string()?)?;
        let grid = grid_eval_fn(|x| q.log_density(x), res, &domain)?;
        write(dir, "posterior_grid.csv", &grid.to_csv_string()?)?;
    }
    Ok(DensityMetrics {
        target: c.target.name().into(),
        dims,
        formats,
        family: c.posterior.family,
        num_params: q.num_params(),
        steps: report.trace.records.len(),
        best_step: report.best_step,
        stopped_early: report.stopped_early,
        final_elbo: last_elbo(&report),
        entropy: q.entropy(),
        elbo,
        reverse_kl: kl,
    })
}

fn single_format(p: &PosteriorConfig) -> CliResult<FixedPointFormat> {
    match p.format {
        Formats::One(f) => Ok(f),
        Formats::PerDim(_) => Err(CliError::Config("BNN posteriors take a single weight format".into())),
    }
}

fn fit_bnn(c: &FitBnnConfig, dir: &Path) -> CliResult<BnnMetrics> {
    let data = make_dataset(&c.dataset, c.seed)?;
    let fmt = single_format(&c.posterior)?;
    let p = c.model.num_params();
    let mut q = MeanFieldPosterior::new(&vec![fmt; p], c.posterior.smoothing, c.seed)?;
    let objective = BnnObjective::new(c.model, &data, c.batch_size, (fmt.lo(), fmt.hi()))?;
    let report = fit(&mut q, &objective, &c.train)?;
    finish_fit(&report, Some(dir))?;
    let q = Posterior::from(q);
    write(dir, "posterior.json", &(q.to_json()? + "\n"))?;

    let mode = c.train.exec;
    let eval = |split: &bnn::Split| -> CliResult<bnn::Metrics> {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ PREDICTIVE_STREAM);
        let probs = predictive(&q, &c.model, &split.inputs, c.eval.predictive_samples, mode, &mut rng)?;
        Ok(bnn::metrics(&probs, &split.labels)?)
    };
    let validation = eval(&data.val)?;
    let test = eval(&data.test)?;
    write(dir, "train.csv", &raw_split_csv(&data, &data.train)?)?;
    write(dir, "test.csv", &raw_split_csv(&data, &data.test)?)?;
    if data.dims() == 2 {
        let grid = predictive_grid(&q, &c.model, &data, &c.eval, mode, c.seed)?;
        write(dir, "predictive_grid.csv", &grid)?;
    }
    Ok(BnnMetrics {
        format: fmt,
        num_params: p,
        steps: report.trace.records.len(),
        best_step: report.best_step,
        stopped_early: report.stopped_early,
        final_elbo: last_elbo(&report),
        entropy: q.entropy(),
        validation,
        test,
    })
}

/// A split in its original (unstandardized) coordinates, as CSV.
fn raw_split_csv(data: &Dataset, split: &bnn::Split) -> CliResult<String> {
    let mut raw = split.clone();
    for row in raw.inputs.chunks_mut(raw.dims) {
        data.unstandardize_point(row);
    }
    let mut buf = Vec::new();
    raw.write_csv(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

/// `p(y = 1 | x)` on the cell midpoints of a grid over the raw training
/// bounding box, padded by a tenth of its span. Header `x,y,p`.
fn predictive_grid<Q: Variational + ?Sized>(
    q: &Q,
    spec: &MlpSpec,
    data: &Dataset,
    eval: &BnnEval,
    mode: ExecMode,
    seed: u64,
) -> CliResult<String> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for row in data.train.inputs.chunks(2) {
        let mut x = [row[0], row[1]];
        data.unstandardize_point(&mut x);
        for d in 0..2 {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    let n = eval.grid_resolution;
    let axes: Vec<Vec<f64>> = (0..2)
        .map(|d| {
            let pad = 0.1 * (hi[d] - lo[d]);
            let (a, b) = (lo[d] - pad, hi[d] + pad);
            let h = (b - a) / n as f64;
            (0..n).map(|i| a + (i as f64 + 0.5) * h).collect()
        })
        .collect();
    let mut inputs = Vec::with_capacity(2 * n * n);
    for &x in &axes[0] {
        for &y in &axes[1] {
            let mut p = [x, y];
            data.standardize_point(&mut p);
            inputs.extend_from_slice(&p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PREDICTIVE_STREAM);
    let probs = predictive(q, spec, &inputs, eval.predictive_samples, mode, &mut rng)?;
    let mut out = String::from("x,y,p\n");
    for (i, &x) in axes[0].iter().enumerate() {
        for (j, &y) in axes[1].iter().enumerate() {
            out.push_str(&format!("{x},{y},{}\n", probs[i * n + j]));
        }
    }
    Ok(out)
}

fn ablate_bits(c: &AblateBitsConfig, dir: &Path) -> CliResult<AblationMetrics> {
    let mut entries = Vec::new();
    let mut per_sigma = Vec::new();
    for &sigma in &c.sigmas {
        let target = TargetSpec::EquidistantGmm {
            components: c.components,
            sigma,
        }
        .build()?;
        let mut entropies = Vec::new();
        for &bits in &c.bits {
            let mut q = MeanFieldPosterior::new(&[c.format(bits)?], c.smoothing, c.seed)?;
            let report = fit(&mut q, &target, &c.train)?;
            finish_fit(&report, None)?;
            let entropy = q.entropy();
            entropies.push(entropy);
            entries.push(AblationEntry {
                sigma,
                bits,
                entropy,
                final_elbo: last_elbo(&report),
            });
        }
        per_sigma.push(SigmaSummary {
            sigma,
            non_increasing: entropies.windows(2).all(|w| w[1] <= w[0] + 0.01),
            plateau_onset: plateau_onset(&c.bits, &entropies, c.plateau_tolerance),
            entropies,
        });
    }
    let mut by_sigma: Vec<&SigmaSummary> = per_sigma.iter().collect();
    by_sigma.sort_by(|a, b| b.sigma.total_cmp(&a.sigma));
    let onset_ordered = by_sigma.windows(2).all(|w| match (w[0].plateau_onset, w[1].plateau_onset) {
        (Some(a), Some(b)) => a <= b,
        (_, None) => true,
        (None, Some(_)) => false,
    });
    let mut csv = String::from("sigma,bits,entropy\n");
    for e in &entries {
        csv.push_str(&format!("{},{},{}\n", e.sigma, e.bits, e.entropy));
    }
    write(dir, "ablation.csv", &csv)?;
    Ok(AblationMetrics {
        bits: c.bits.clone(),
        entries,
        per_sigma,
        onset_ordered,
    })
}

/// First `bits[i]` such that every later increment is below `tol`.
pub fn plateau_onset(bits: &[u32], entropies: &[f64], tol: f64) -> Option<u32> {
    let n = entropies.len();
    if n < 2 {
        return None;
    }
    let mut onset = None;
    for i in (0..n - 1).rev() {
        if (entropies[i + 1] - entropies[i]).abs() < tol {
            onset = Some(bits[i]);
        } else {
            break;
        }
    }
    onset
}

fn chop(c: &ChopConfig, dir: &Path) -> CliResult<ChopMetrics> {
    let source = ExperimentConfig::from_json(&read(&c.artifact.join("resolved_config.json"))?)?;
    let ExperimentConfig::FitBnn(trained) = source else {
        return Err(CliError::Config(format!(
            "{} is not a fit_bnn run",
            c.artifact.display()
        )));
    };
    let q = Posterior::from_json(&read(&c.artifact.join("posterior.json"))?)?;
    let q = q
        .as_mean_field()
        .ok_or_else(|| CliError::Config("chopping needs a mean-field posterior".into()))?
        .clone();
    let data = make_dataset(&trained.dataset, trained.seed)?;
    let spec = trained.model;
    let fmt = q.circuit(0).format();
    let fixed = fmt.total_bits() - fmt.frac_bits();
    let p = q.dims();
    let n_checks = c.spot_check_weights.min(p);
    let spot_checked: Vec<usize> = (0..n_checks).map(|k| k * p / n_checks.max(1)).collect();
    let mode = trained.train.exec;

    let mut rows = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut table = String::from("bits,frac_bits,nlpd,accuracy,ece\n");
    for &bits in &c.precisions {
        if bits > fmt.total_bits() || bits <= fixed {
            return Err(CliError::Config(format!(
                "cannot chop {fmt} to {bits} bits: need {} < bits <= {}",
                fixed,
                fmt.total_bits()
            )));
        }
        let frac_bits = bits - fixed;
        let t = q.truncate(frac_bits)?;
        for &k in &spot_checked {
            let (a, b) = (q.circuit(k), t.circuit(k));
            let original = a.prefix_masses(b.depth())?;
            for (x, y) in original.iter().zip(b.leaf_masses()) {
                max_err = max_err.max((x - y).abs());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ PREDICTIVE_STREAM);
        let probs = predictive(&t, &spec, &data.test.inputs, c.eval.predictive_samples, mode, &mut rng)?;
        let m = bnn::metrics(&probs, &data.test.labels)?;
        table.push_str(&format!("{bits},{frac_bits},{},{},{}\n", m.nlpd, m.accuracy, m.ece));
        rows.push(ChopRow {
            bits,
            frac_bits,
            nlpd: m.nlpd,
            accuracy: m.accuracy,
            ece: m.ece,
        });
        if data.dims() == 2 {
            let grid = predictive_grid(&t, &spec, &data, &c.eval, mode, c.seed)?;
            write(dir, &format!("grid_{bits}bit.csv"), &grid)?;
        }
    }
    write(dir, "chop_metrics.csv", &table)?;
    Ok(ChopMetrics {
        source_format: fmt,
        rows,
        spot_checked,
        prefix_mass_max_error: max_err,
    })
}
