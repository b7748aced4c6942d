//! Analytic target densities and grid evaluation.
//!
//! The 2D targets are placed so that almost all of their mass lies in
//! `[-4, 4)^2`. Where a target is naturally wider (funnel, banana) it is an
//! affine rescaling of the textbook form; the rescaling is part of the
//! density, so every zoo target stays normalized.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Unnormalized (or normalized) log-density over `R^D`.
pub trait TargetDensity: Sync {
    fn dims(&self) -> usize;

    /// `-inf` where the density is zero.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Writes `∇ log p(x)` into `grad` and returns `true`, or returns `false`
    /// if the target has no analytic gradient.
    fn gradient(&self, _x: &[f64], _grad: &mut [f64]) -> bool {
        false
    }

    fn is_normalized(&self) -> bool {
        false
    }

    /// Box that holds essentially all of the mass.
    fn recommended_domain(&self) -> Vec<(f64, f64)>;
}

impl<T: TargetDensity + ?Sized> TargetDensity for &T {
    fn dims(&self) -> usize {
        (**self).dims()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> bool {
        (**self).gradient(x, grad)
    }
    fn is_normalized(&self) -> bool {
        (**self).is_normalized()
    }
    fn recommended_domain(&self) -> Vec<(f64, f64)> {
        (**self).recommended_domain()
    }
}

impl<T: TargetDensity + ?Sized> TargetDensity for Box<T> {
    fn dims(&self) -> usize {
        (**self).dims()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> bool {
        (**self).gradient(x, grad)
    }
    fn is_normalized(&self) -> bool {
        (**self).is_normalized()
    }
    fn recommended_domain(&self) -> Vec<(f64, f64)> {
        (**self).recommended_domain()
    }
}

/// Wraps a closure as an unnormalized target without a gradient.
pub struct FnTarget<F> {
    dims: usize,
    domain: Vec<(f64, f64)>,
    normalized: bool,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnTarget<F> {
    pub fn new(domain: Vec<(f64, f64)>, f: F) -> Self {
        Self {
            dims: domain.len(),
            domain,
            normalized: false,
            f,
        }
    }

    pub fn normalized(mut self, yes: bool) -> Self {
        self.normalized = yes;
        self
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> TargetDensity for FnTarget<F> {
    fn dims(&self) -> usize {
        self.dims
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn is_normalized(&self) -> bool {
        self.normalized
    }
    fn recommended_domain(&self) -> Vec<(f64, f64)> {
        self.domain.clone()
    }
}

fn default_gmm1d_weights() -> Vec<f64> {
    vec![0.3, 0.7]
}
fn default_gmm1d_means() -> Vec<f64> {
    vec![-1.5, 1.2]
}
fn default_gmm1d_stds() -> Vec<f64> {
    vec![0.5, 0.6]
}
fn default_mixture2d_weights() -> Vec<f64> {
    vec![0.4, 0.3, 0.3]
}
fn default_mixture2d_means() -> Vec<[f64; 2]> {
    vec![[-1.5, -1.0], [1.5, -1.5], [0.5, 1.5]]
}
fn default_mixture2d_stds() -> Vec<f64> {
    vec![0.5, 0.6, 0.55]
}
fn default_funnel_v_std() -> f64 {
    1.5
}
fn default_funnel_scale() -> [f64; 2] {
    [0.25, 0.55]
}
fn default_two_modal_offset() -> f64 {
    2.0
}
fn default_half() -> f64 {
    0.5
}
fn default_ring_radius() -> f64 {
    2.0
}
fn default_ring_std() -> f64 {
    0.3
}
fn default_banana_curvature() -> f64 {
    0.3
}
fn default_banana_stds() -> [f64; 2] {
    [2.0, 1.0]
}
fn default_banana_scale() -> [f64; 2] {
    [0.5, 0.4]
}
fn default_banana_shift() -> f64 {
    -1.5
}
fn default_components() -> usize {
    4
}
fn default_sigma() -> f64 {
    0.1
}
fn default_one() -> usize {
    1
}
fn default_unit() -> Vec<(f64, f64)> {
    vec![(0.0, 1.0)]
}

/// Declarative target description, as used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Mixture of 1D Gaussians.
    Gmm1d {
        #[serde(default = "default_gmm1d_weights")]
        weights: Vec<f64>,
        #[serde(default = "default_gmm1d_means")]
        means: Vec<f64>,
        #[serde(default = "default_gmm1d_stds")]
        stds: Vec<f64>,
    },
    /// Mixture of isotropic 2D Gaussians.
    Mixture2d {
        #[serde(default = "default_mixture2d_weights")]
        weights: Vec<f64>,
        #[serde(default = "default_mixture2d_means")]
        means: Vec<[f64; 2]>,
        #[serde(default = "default_mixture2d_stds")]
        stds: Vec<f64>,
    },
    /// `v ~ N(0, v_std^2)`, `x | v ~ N(0, e^v)`, shown as `(scale[0] x, scale[1] v)`.
    NealsFunnel {
        #[serde(default = "default_funnel_v_std")]
        v_std: f64,
        #[serde(default = "default_funnel_scale")]
        scale: [f64; 2],
    },
    /// Equal mixture of `N(±(offset, offset), std^2 I)`.
    TwoModalGaussian {
        #[serde(default = "default_two_modal_offset")]
        offset: f64,
        #[serde(default = "default_half")]
        std: f64,
    },
    /// Gaussian in the radius around a circle.
    Ring {
        #[serde(default = "default_ring_radius")]
        radius: f64,
        #[serde(default = "default_ring_std")]
        std: f64,
    },
    /// `z ~ N(0, diag(stds^2))`, `y = z2 + curvature (z1^2 - stds[0]^2)`,
    /// shown as `(scale[0] z1, scale[1] y + shift)`.
    Banana {
        #[serde(default = "default_banana_curvature")]
        curvature: f64,
        #[serde(default = "default_banana_stds")]
        stds: [f64; 2],
        #[serde(default = "default_banana_scale")]
        scale: [f64; 2],
        #[serde(default = "default_banana_shift")]
        shift: f64,
    },
    /// `K` equal-weight Gaussians at the cell centers `(k + 1/2) / K` of `[0, 1)`.
    EquidistantGmm {
        #[serde(default = "default_components")]
        components: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// Independent normals.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Uniform on a box.
    Uniform {
        #[serde(default = "default_unit")]
        ranges: Vec<(f64, f64)>,
    },
    /// Product of `dims` standard normals.
    StandardNormal {
        #[serde(default = "default_one")]
        dims: usize,
    },
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::Gmm1d { .. } => "gmm1d",
            TargetSpec::Mixture2d { .. } => "mixture2d",
            TargetSpec::NealsFunnel { .. } => "neals_funnel",
            TargetSpec::TwoModalGaussian { .. } => "two_modal_gaussian",
            TargetSpec::Ring { .. } => "ring",
            TargetSpec::Banana { .. } => "banana",
            TargetSpec::EquidistantGmm { .. } => "equidistant_gmm",
            TargetSpec::Gaussian { .. } => "gaussian",
            TargetSpec::Uniform { .. } => "uniform",
            TargetSpec::StandardNormal { .. } => "standard_normal",
        }
    }

    /// Defaults for a named target.
    pub fn by_name(name: &str) -> Result<Self> {
        let json = format!("{{\"name\": {name:?}}}");
        serde_json::from_str(&json).map_err(|_| Error::InvalidParam(format!("unknown target {name:?}")))
    }

    pub fn build(&self) -> Result<AnalyticTarget> {
        make_target(self)
    }
}

/// One of the zoo targets.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticTarget {
    kind: Kind,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Mixture(GaussianMixture),
    Funnel { v_std: f64, scale: [f64; 2] },
    Ring { radius: f64, std: f64, log_z: f64 },
    Banana { curvature: f64, stds: [f64; 2], scale: [f64; 2], shift: f64 },
    Uniform { ranges: Vec<(f64, f64)>, log_volume: f64 },
}

/// Isotropic Gaussian mixture in `D` dimensions.
#[derive(Clone, Debug, PartialEq)]
struct GaussianMixture {
    dims: usize,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<Vec<f64>>,
    domain: Vec<(f64, f64)>,
}

impl GaussianMixture {
    fn new(weights: &[f64], means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>, domain: Vec<(f64, f64)>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(Error::InvalidParam("mixture needs matching, non-empty weights/means/stds".into()));
        }
        let dims = means[0].len();
        if means.iter().chain(&stds).any(|v| v.len() != dims) {
            return Err(Error::InvalidParam("mixture components differ in dimension".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParam("mixture weights must be positive".into()));
        }
        if stds.iter().flatten().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParam("standard deviations must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            dims,
            log_weights: weights.iter().map(|w| (w / total).ln()).collect(),
            means,
            stds,
            domain,
        })
    }

    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.log_weights.len())
            .map(|c| {
                self.log_weights[c]
                    + x.iter()
                        .zip(&self.means[c])
                        .zip(&self.stds[c])
                        .map(|((&xi, &m), &s)| normal_logpdf(xi, m, s))
                        .sum::<f64>()
            })
            .collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_logs(x))
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let logs = self.component_logs(x);
        let lse = log_sum_exp(&logs);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (c, l) in logs.iter().enumerate() {
            let r = (l - lse).exp();
            for d in 0..self.dims {
                let s = self.stds[c][d];
                grad[d] -= r * (x[d] - self.means[c][d]) / (s * s);
            }
        }
    }
}

#[inline]
pub(crate) fn normal_logpdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Standard normal CDF.
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn make_target(spec: &TargetSpec) -> Result<AnalyticTarget> {
    let box4 = |d: usize| vec![(-4.0, 4.0); d];
    let kind = match spec {
        TargetSpec::Gmm1d { weights, means, stds } => {
            if means.len() != weights.len() || stds.len() != weights.len() {
                return Err(Error::InvalidParam("gmm1d needs equally many weights, means and stds".into()));
            }
            Kind::Mixture(GaussianMixture::new(
                weights,
                means.iter().map(|&m| vec![m]).collect(),
                stds.iter().map(|&s| vec![s]).collect(),
                box4(1),
            )?)
        }
        TargetSpec::Mixture2d { weights, means, stds } => {
            if means.len() != weights.len() || stds.len() != weights.len() {
                return Err(Error::InvalidParam("mixture2d needs equally many weights, means and stds".into()));
            }
            Kind::Mixture(GaussianMixture::new(
                weights,
                means.iter().map(|m| m.to_vec()).collect(),
                stds.iter().map(|&s| vec![s, s]).collect(),
                box4(2),
            )?)
        }
        &TargetSpec::NealsFunnel { v_std, scale } => {
            check_positive("v_std", v_std)?;
            check_positive("scale[0]", scale[0])?;
            check_positive("scale[1]", scale[1])?;
            Kind::Funnel { v_std, scale }
        }
        &TargetSpec::TwoModalGaussian { offset, std } => {
            check_positive("std", std)?;
            if !offset.is_finite() {
                return Err(Error::InvalidParam("offset must be finite".into()));
            }
            Kind::Mixture(GaussianMixture::new(
                &[0.5, 0.5],
                vec![vec![offset, offset], vec![-offset, -offset]],
                vec![vec![std, std]; 2],
                box4(2),
            )?)
        }
        &TargetSpec::Ring { radius, std } => {
            check_positive("radius", radius)?;
            check_positive("std", std)?;
            // ∫ exp(-(r - r0)^2 / 2s^2) 2πr dr over r > 0
            let z = 2.0
                * PI
                * (std * std * (-radius * radius / (2.0 * std * std)).exp()
                    + radius * std * (2.0 * PI).sqrt() * std_normal_cdf(radius / std));
            Kind::Ring {
                radius,
                std,
                log_z: z.ln(),
            }
        }
        &TargetSpec::Banana {
            curvature,
            stds,
            scale,
            shift,
        } => {
            check_positive("stds[0]", stds[0])?;
            check_positive("stds[1]", stds[1])?;
            check_positive("scale[0]", scale[0])?;
            check_positive("scale[1]", scale[1])?;
            if !curvature.is_finite() || !shift.is_finite() {
                return Err(Error::InvalidParam("curvature and shift must be finite".into()));
            }
            Kind::Banana {
                curvature,
                stds,
                scale,
                shift,
            }
        }
        &TargetSpec::EquidistantGmm { components, sigma } => {
            if components == 0 {
                return Err(Error::InvalidParam("equidistant_gmm needs at least one component".into()));
            }
            check_positive("sigma", sigma)?;
            let k = components as f64;
            Kind::Mixture(GaussianMixture::new(
                &vec![1.0; components],
                (0..components).map(|c| vec![(c as f64 + 0.5) / k]).collect(),
                vec![vec![sigma]; components],
                vec![(0.0, 1.0)],
            )?)
        }
        TargetSpec::Gaussian { mean, std } => {
            if mean.is_empty() || mean.len() != std.len() {
                return Err(Error::InvalidParam("gaussian needs equally many means and stds".into()));
            }
            let domain = mean.iter().zip(std).map(|(m, s)| (m - 6.0 * s, m + 6.0 * s)).collect();
            Kind::Mixture(GaussianMixture::new(&[1.0], vec![mean.clone()], vec![std.clone()], domain)?)
        }
        TargetSpec::Uniform { ranges } => {
            if ranges.is_empty() || ranges.iter().any(|&(a, b)| !(a < b && a.is_finite() && b.is_finite())) {
                return Err(Error::InvalidParam("uniform needs non-empty finite ranges with lo < hi".into()));
            }
            Kind::Uniform {
                ranges: ranges.clone(),
                log_volume: ranges.iter().map(|(a, b)| (b - a).ln()).sum(),
            }
        }
        &TargetSpec::StandardNormal { dims } => {
            if dims == 0 {
                return Err(Error::InvalidParam("standard_normal needs dims >= 1".into()));
            }
            Kind::Mixture(GaussianMixture::new(&[1.0], vec![vec![0.0; dims]], vec![vec![1.0; dims]], box4(dims))?)
        }
    };
    Ok(AnalyticTarget { kind })
}

impl TargetDensity for AnalyticTarget {
    fn dims(&self) -> usize {
        match &self.kind {
            Kind::Mixture(m) => m.dims,
            Kind::Uniform { ranges, .. } => ranges.len(),
            _ => 2,
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Mixture(m) => m.log_density(x),
            &Kind::Funnel { v_std, scale } => {
                let v = x[1] / scale[1];
                let xs = x[0] / scale[0];
                normal_logpdf(v, 0.0, v_std) + normal_logpdf(xs, 0.0, (0.5 * v).exp()) - (scale[0] * scale[1]).ln()
            }
            &Kind::Ring { radius, std, log_z } => {
                let r = x[0].hypot(x[1]);
                let z = (r - radius) / std;
                -0.5 * z * z - log_z
            }
            &Kind::Banana {
                curvature,
                stds,
                scale,
                shift,
            } => {
                let (z1, z2) = banana_latent(x, curvature, stds, scale, shift);
                normal_logpdf(z1, 0.0, stds[0]) + normal_logpdf(z2, 0.0, stds[1]) - (scale[0] * scale[1]).ln()
            }
            Kind::Uniform { ranges, log_volume } => {
                if ranges.iter().zip(x).all(|(&(a, b), &xi)| xi >= a && xi < b) {
                    -log_volume
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> bool {
        match &self.kind {
            Kind::Mixture(m) => m.gradient(x, grad),
            &Kind::Funnel { v_std, scale } => {
                let v = x[1] / scale[1];
                let xs = x[0] / scale[0];
                let inv_var = (-v).exp();
                grad[0] = -xs * inv_var / scale[0];
                // d/dv of -v/2 - xs^2 e^{-v} / 2
                grad[1] = (-v / (v_std * v_std) - 0.5 + 0.5 * xs * xs * inv_var) / scale[1];
            }
            &Kind::Ring { radius, std, .. } => {
                let r = x[0].hypot(x[1]);
                if r == 0.0 {
                    grad[0] = 0.0;
                    grad[1] = 0.0;
                } else {
                    let dr = -(r - radius) / (std * std);
                    grad[0] = dr * x[0] / r;
                    grad[1] = dr * x[1] / r;
                }
            }
            &Kind::Banana {
                curvature,
                stds,
                scale,
                shift,
            } => {
                let (z1, z2) = banana_latent(x, curvature, stds, scale, shift);
                let g1 = -z1 / (stds[0] * stds[0]);
                let g2 = -z2 / (stds[1] * stds[1]);
                // z1 = x0 / s0, z2 = (x1 - shift) / s1 - c (z1^2 - std0^2)
                grad[0] = (g1 - g2 * 2.0 * curvature * z1) / scale[0];
                grad[1] = g2 / scale[1];
            }
            Kind::Uniform { .. } => grad.iter_mut().for_each(|g| *g = 0.0),
        }
        true
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn recommended_domain(&self) -> Vec<(f64, f64)> {
        match &self.kind {
            Kind::Mixture(m) => m.domain.clone(),
            Kind::Uniform { ranges, .. } => ranges.clone(),
            _ => vec![(-4.0, 4.0); 2],
        }
    }
}

fn banana_latent(x: &[f64], curvature: f64, stds: [f64; 2], scale: [f64; 2], shift: f64) -> (f64, f64) {
    let z1 = x[0] / scale[0];
    let y = (x[1] - shift) / scale[1];
    (z1, y - curvature * (z1 * z1 - stds[0] * stds[0]))
}

/// Density values at cell midpoints of a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    /// Midpoints per axis.
    pub axes: Vec<Vec<f64>>,
    /// Row-major densities; the last axis varies fastest.
    pub values: Vec<f64>,
}

impl Grid {
    pub fn cell_volume(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| if a.len() > 1 { a[1] - a[0] } else { 1.0 })
            .product()
    }

    /// Riemann sum of the densities.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// CSV with a header row: `x,density` in 1D, `x,y,density` in 2D.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Serialization(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        match self.axes.len() {
            1 => {
                w.write_record(["x", "density"]).map_err(io)?;
                for (x, v) in self.axes[0].iter().zip(&self.values) {
                    w.write_record([x.to_string(), v.to_string()]).map_err(io)?;
                }
            }
            _ => {
                w.write_record(["x", "y", "density"]).map_err(io)?;
                let ny = self.axes[1].len();
                for (i, x) in self.axes[0].iter().enumerate() {
                    for (j, y) in self.axes[1].iter().enumerate() {
                        w.write_record([x.to_string(), y.to_string(), self.values[i * ny + j].to_string()])
                            .map_err(io)?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Evaluates `exp(log_density)` at the midpoints of a `resolution^D` grid.
pub fn grid_eval_fn<F: Fn(&[f64]) -> f64>(log_density: F, resolution: usize, domain: &[(f64, f64)]) -> Result<Grid> {
    if domain.is_empty() || domain.len() > 2 {
        return Err(Error::Unsupported(format!("grid evaluation in {} dimensions", domain.len())));
    }
    if resolution < 2 {
        return Err(Error::InvalidParam("grid resolution must be at least 2".into()));
    }
    let axes: Vec<Vec<f64>> = domain
        .iter()
        .map(|&(a, b)| {
            let h = (b - a) / resolution as f64;
            (0..resolution).map(|i| a + (i as f64 + 0.5) * h).collect()
        })
        .collect();
    let values = if axes.len() == 1 {
        axes[0].iter().map(|&x| log_density(&[x]).exp()).collect()
    } else {
        let mut v = Vec::with_capacity(resolution * resolution);
        for &x in &axes[0] {
            for &y in &axes[1] {
                v.push(log_density(&[x, y]).exp());
            }
        }
        v
    };
    Ok(Grid { axes, values })
}

pub fn grid_eval<T: TargetDensity + ?Sized>(target: &T, resolution: usize, domain: &[(f64, f64)]) -> Result<Grid> {
    if target.dims() != domain.len() {
        return Err(Error::Shape {
            expected: target.dims(),
            got: domain.len(),
        });
    }
    grid_eval_fn(|x| target.log_density(x), resolution, domain)
}
