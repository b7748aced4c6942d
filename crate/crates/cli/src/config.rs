//! Declarative experiment configs.
//!
//! Every config is a JSON object tagged by `"experiment"`. Unknown fields are
//! rejected, missing ones take the defaults below, and the fully resolved
//! config is written next to the results so a run can be repeated exactly.

use std::fs;
use std::path::{Path, PathBuf};

use bitvi::bnn::{DatasetSpec, MlpSpec};
use bitvi::targets::TargetSpec;
use bitvi::train::TrainConfig;
use bitvi::{FixedPointFormat, SmoothingSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    FitDensity(FitDensityConfig),
    FitBnn(FitBnnConfig),
    AblateBits(AblateBitsConfig),
    Chop(ChopConfig),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    MeanField,
    Joint,
}

/// One format for every dimension, or one per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Formats {
    One(FixedPointFormat),
    PerDim(Vec<FixedPointFormat>),
}

impl Formats {
    pub fn expand(&self, dims: usize) -> CliResult<Vec<FixedPointFormat>> {
        match self {
            Formats::One(f) => Ok(vec![*f; dims]),
            Formats::PerDim(v) if v.len() == dims => Ok(v.clone()),
            Formats::PerDim(v) => Err(CliError::Config(format!(
                "{} formats given for a {dims}-dimensional target",
                v.len()
            ))),
        }
    }
}

fn default_smoothing() -> SmoothingSchedule {
    SmoothingSchedule::quadratic(0.1).expect("positive constant")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    pub format: Formats,
    #[serde(default)]
    pub family: Family,
    /// Joint family only; defaults to `0, 1, .., D-1`.
    #[serde(default)]
    pub axis_order: Option<Vec<usize>>,
    #[serde(default = "default_smoothing")]
    pub smoothing: SmoothingSchedule,
}

fn default_kl_samples() -> usize {
    100_000
}
fn default_density_grid() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityEval {
    /// Samples for the reverse-KL estimate.
    #[serde(default = "default_kl_samples")]
    pub kl_samples: usize,
    #[serde(default = "default_density_grid")]
    pub grid_resolution: usize,
}

impl Default for DensityEval {
    fn default() -> Self {
        Self {
            kl_samples: default_kl_samples(),
            grid_resolution: default_density_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDensityConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub target: TargetSpec,
    pub posterior: PosteriorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: DensityEval,
}

fn default_predictive_samples() -> usize {
    200
}
fn default_bnn_grid() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnnEval {
    #[serde(default = "default_predictive_samples")]
    pub predictive_samples: usize,
    /// Points per axis of the predictive grid (2D inputs only).
    #[serde(default = "default_bnn_grid")]
    pub grid_resolution: usize,
}

impl Default for BnnEval {
    fn default() -> Self {
        Self {
            predictive_samples: default_predictive_samples(),
            grid_resolution: default_bnn_grid(),
        }
    }
}

fn default_batch_size() -> usize {
    32
}

fn default_bnn_train() -> TrainConfig {
    TrainConfig {
        quantize: true,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBnnConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub model: MlpSpec,
    /// Mean-field only; a single format is shared by all weights.
    pub posterior: PosteriorConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_bnn_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: BnnEval,
}

fn default_components() -> usize {
    4
}
fn default_plateau_tolerance() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateBitsConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Equidistant mixture on `[0, 1)`.
    #[serde(default = "default_components")]
    pub components: usize,
    pub sigmas: Vec<f64>,
    /// Total bit counts to fit.
    pub bits: Vec<u32>,
    #[serde(default)]
    pub signed: bool,
    #[serde(default)]
    pub integer_bits: u32,
    #[serde(default = "default_smoothing")]
    pub smoothing: SmoothingSchedule,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_plateau_tolerance")]
    pub plateau_tolerance: f64,
}

impl AblateBitsConfig {
    pub fn format(&self, bits: u32) -> CliResult<FixedPointFormat> {
        let fixed = self.integer_bits + self.signed as u32;
        let frac = bits
            .checked_sub(fixed)
            .ok_or_else(|| CliError::Config(format!("{bits} bits leave no room for {fixed} sign/integer bits")))?;
        let f = if self.signed {
            FixedPointFormat::signed(self.integer_bits, frac)
        } else {
            FixedPointFormat::unsigned(self.integer_bits, frac)
        };
        f.map_err(|e| CliError::Config(e.to_string()))
    }
}

fn default_precisions() -> Vec<u32> {
    vec![10, 8, 6, 4, 2]
}
fn default_spot_checks() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChopConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Output directory of a `fit_bnn` run.
    pub artifact: PathBuf,
    /// Total bits per weight after truncation.
    #[serde(default = "default_precisions")]
    pub precisions: Vec<u32>,
    #[serde(default)]
    pub eval: BnnEval,
    /// Weights whose prefix masses are compared after truncation.
    #[serde(default = "default_spot_checks")]
    pub spot_check_weights: usize,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_train(train: &TrainConfig) -> CliResult<()> {
    train.validate().map_err(|e| invalid(e.to_string()))
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let s = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::FitDensity(_) => "fit_density",
            ExperimentConfig::FitBnn(_) => "fit_bnn",
            ExperimentConfig::AblateBits(_) => "ablate_bits",
            ExperimentConfig::Chop(_) => "chop",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::FitDensity(c) => c.seed,
            ExperimentConfig::FitBnn(c) => c.seed,
            ExperimentConfig::AblateBits(c) => c.seed,
            ExperimentConfig::Chop(c) => c.seed,
        }
    }

    fn seed_mut(&mut self) -> &mut u64 {
        match self {
            ExperimentConfig::FitDensity(c) => &mut c.seed,
            ExperimentConfig::FitBnn(c) => &mut c.seed,
            ExperimentConfig::AblateBits(c) => &mut c.seed,
            ExperimentConfig::Chop(c) => &mut c.seed,
        }
    }

    pub fn out(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::FitDensity(c) => c.out.as_deref(),
            ExperimentConfig::FitBnn(c) => c.out.as_deref(),
            ExperimentConfig::AblateBits(c) => c.out.as_deref(),
            ExperimentConfig::Chop(c) => c.out.as_deref(),
        }
    }

    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        match self {
            ExperimentConfig::FitDensity(c) => &mut c.out,
            ExperimentConfig::FitBnn(c) => &mut c.out,
            ExperimentConfig::AblateBits(c) => &mut c.out,
            ExperimentConfig::Chop(c) => &mut c.out,
        }
    }

    /// Applies command-line overrides. The top-level seed also becomes the
    /// training seed.
    pub fn resolve(mut self, out: Option<PathBuf>, seed: Option<u64>) -> CliResult<Self> {
        if let Some(s) = seed {
            *self.seed_mut() = s;
        }
        if let Some(o) = out {
            *self.out_mut() = Some(o);
        }
        if self.out().is_none() {
            return Err(invalid("no output directory: pass --out or set \"out\""));
        }
        let seed = self.seed();
        match &mut self {
            ExperimentConfig::FitDensity(c) => c.train.seed = seed,
            ExperimentConfig::FitBnn(c) => c.train.seed = seed,
            ExperimentConfig::AblateBits(c) => c.train.seed = seed,
            ExperimentConfig::Chop(_) => {}
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        match self {
            ExperimentConfig::FitDensity(c) => {
                check_train(&c.train)?;
                let target = c.target.build().map_err(|e| invalid(e.to_string()))?;
                let dims = bitvi::TargetDensity::dims(&target);
                c.posterior.format.expand(dims)?;
                if c.posterior.family == Family::MeanField && c.posterior.axis_order.is_some() {
                    return Err(invalid("axis_order only applies to the joint family"));
                }
                if c.eval.kl_samples == 0 || c.eval.grid_resolution < 2 {
                    return Err(invalid("eval needs kl_samples >= 1 and grid_resolution >= 2"));
                }
            }
            ExperimentConfig::FitBnn(c) => {
                check_train(&c.train)?;
                c.model.validate().map_err(|e| invalid(e.to_string()))?;
                if c.posterior.family != Family::MeanField || c.posterior.axis_order.is_some() {
                    return Err(invalid("BNN posteriors are mean-field"));
                }
                if !matches!(c.posterior.format, Formats::One(_)) {
                    return Err(invalid("BNN posteriors take a single weight format"));
                }
                if c.batch_size == 0 {
                    return Err(invalid("batch_size must be at least 1"));
                }
                check_bnn_eval(&c.eval)?;
            }
            ExperimentConfig::AblateBits(c) => {
                check_train(&c.train)?;
                if c.sigmas.is_empty() || c.bits.is_empty() {
                    return Err(invalid("sigmas and bits must be non-empty"));
                }
                if c.components == 0 || c.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(invalid("need components >= 1 and positive sigmas"));
                }
                if !(c.plateau_tolerance > 0.0) {
                    return Err(invalid("plateau_tolerance must be positive"));
                }
                for &b in &c.bits {
                    c.format(b)?;
                }
            }
            ExperimentConfig::Chop(c) => {
                if c.precisions.is_empty() || c.precisions.contains(&0) {
                    return Err(invalid("precisions must be non-empty and positive"));
                }
                check_bnn_eval(&c.eval)?;
            }
        }
        Ok(())
    }
}

fn check_bnn_eval(e: &BnnEval) -> CliResult<()> {
    if e.predictive_samples == 0 || e.grid_resolution < 2 {
        return Err(invalid("eval needs predictive_samples >= 1 and grid_resolution >= 2"));
    }
    Ok(())
}
