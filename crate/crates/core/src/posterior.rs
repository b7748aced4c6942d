//! The interface the trainer needs from a variational family, and a tagged
//! union of the concrete families for configs and files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multivariate::{JointTreeCircuit, JointTreeDoc, MeanFieldDoc, MeanFieldPosterior};

/// A reparameterizable variational distribution with tractable entropy.
///
/// Parameters are the flat vector of raw pre-weights. Reparameterization maps
/// a point `u` of the unit box to a continuous sample and its quantized
/// (leaf-representative) value.
pub trait Variational: Sync {
    fn dims(&self) -> usize;

    fn num_params(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Per-dimension `[lo, hi)` support.
    fn ranges(&self) -> Vec<(f64, f64)>;

    fn log_density(&self, x: &[f64]) -> f64;

    fn entropy(&self) -> f64;

    /// Entropy, adding `scale * dH/dparams` into `grad`.
    fn entropy_with_grad(&self, scale: f64, grad: &mut [f64]) -> f64;

    /// Writes the continuous sample into `x` and the leaf representative into
    /// `quantized`. `u` must lie in `[0, 1)^D`.
    fn reparam(&self, u: &[f64], x: &mut [f64], quantized: &mut [f64]);

    /// Pushes `Σ_d upstream[d] * ∂x_d/∂params` as sparse `(index, value)` pairs.
    fn reparam_grad(&self, u: &[f64], upstream: &[f64], out: &mut Vec<(usize, f64)>);
}

pub(crate) fn check_unit_box(u: &[f64], dims: usize) -> Result<()> {
    if u.len() != dims {
        return Err(Error::Shape {
            expected: dims,
            got: u.len(),
        });
    }
    if let Some(bad) = u.iter().find(|v| !(0.0..1.0).contains(*v)) {
        return Err(Error::Domain(format!("u = {bad} is outside [0, 1)")));
    }
    Ok(())
}

/// Either variational family.
#[derive(Clone, Debug, PartialEq)]
pub enum Posterior {
    MeanField(MeanFieldPosterior),
    Joint(JointTreeCircuit),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Posterior::MeanField($p) => $e,
            Posterior::Joint($p) => $e,
        }
    };
}

impl Variational for Posterior {
    fn dims(&self) -> usize {
        dispatch!(self, p => p.dims())
    }
    fn num_params(&self) -> usize {
        dispatch!(self, p => p.num_params())
    }
    fn params(&self) -> Vec<f64> {
        dispatch!(self, p => p.params())
    }
    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        dispatch!(self, p => p.set_params(params))
    }
    fn ranges(&self) -> Vec<(f64, f64)> {
        dispatch!(self, p => p.ranges())
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        dispatch!(self, p => p.log_density(x))
    }
    fn entropy(&self) -> f64 {
        dispatch!(self, p => p.entropy())
    }
    fn entropy_with_grad(&self, scale: f64, grad: &mut [f64]) -> f64 {
        dispatch!(self, p => p.entropy_with_grad(scale, grad))
    }
    fn reparam(&self, u: &[f64], x: &mut [f64], quantized: &mut [f64]) {
        dispatch!(self, p => p.reparam(u, x, quantized))
    }
    fn reparam_grad(&self, u: &[f64], upstream: &[f64], out: &mut Vec<(usize, f64)>) {
        dispatch!(self, p => p.reparam_grad(u, upstream, out))
    }
}

impl Posterior {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&PosteriorDoc::from(self)).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: PosteriorDoc = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        doc.try_into()
    }

    pub fn as_mean_field(&self) -> Option<&MeanFieldPosterior> {
        match self {
            Posterior::MeanField(m) => Some(m),
            Posterior::Joint(_) => None,
        }
    }
}

impl From<MeanFieldPosterior> for Posterior {
    fn from(p: MeanFieldPosterior) -> Self {
        Posterior::MeanField(p)
    }
}

impl From<JointTreeCircuit> for Posterior {
    fn from(p: JointTreeCircuit) -> Self {
        Posterior::Joint(p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PosteriorDoc {
    MeanField(MeanFieldDoc),
    Joint(JointTreeDoc),
}

impl From<&Posterior> for PosteriorDoc {
    fn from(p: &Posterior) -> Self {
        match p {
            Posterior::MeanField(m) => PosteriorDoc::MeanField(m.into()),
            Posterior::Joint(j) => PosteriorDoc::Joint(j.into()),
        }
    }
}

impl TryFrom<PosteriorDoc> for Posterior {
    type Error = Error;
    fn try_from(doc: PosteriorDoc) -> Result<Self> {
        Ok(match doc {
            PosteriorDoc::MeanField(m) => Posterior::MeanField(m.try_into()?),
            PosteriorDoc::Joint(j) => Posterior::Joint(j.try_into()?),
        })
    }
}
