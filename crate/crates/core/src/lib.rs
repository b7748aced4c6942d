//! Variational inference with deterministic probabilistic circuits over
//! fixed-point bitstrings.
//!
//! A [`BitCircuit`] is a complete binary tree of sum nodes over the bits of
//! one quantized scalar. Its density, CDF, inverse CDF and entropy are all
//! exact and cost one pass over the tree. [`MeanFieldPosterior`] and
//! [`JointTreeCircuit`] lift this to several dimensions, and [`train`] fits
//! either family to a target log-density by maximizing a Monte Carlo ELBO.

pub mod bitcircuit;
pub mod bnn;
pub mod error;
pub mod exec;
pub mod fixedpoint;
pub mod hexfloat;
pub mod multivariate;
pub mod posterior;
pub mod targets;
pub mod train;
mod tree;

pub use bitcircuit::{AlphaRule, BitCircuit, Draw, SmoothingSchedule};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use fixedpoint::{Bitstring, FixedPointFormat};
pub use multivariate::{JointTreeCircuit, MeanFieldPosterior, MultiDraw};
pub use posterior::{Posterior, Variational};
pub use targets::TargetDensity;
