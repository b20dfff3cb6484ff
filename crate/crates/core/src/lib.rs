//! Spectral neural networks for non-linear matrix sensing.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, the compact SVD and the Khatri–Rao product.
//! - [`measurements`]: sensing ensembles, ground truths and labels.
//! - [`activation`] and [`model`]: spectral activations, SNN blocks and
//!   initializers.
//! - [`flow`]: the closed-form reduced gradient flow in diagonal coordinates.
//! - [`descent`]: gradient descent for SNNs and the linear-regression and
//!   depth-3 baselines.
//! - [`diagnostics`]: rate fits, KKT certificates and recovery metrics.
//! - [`config`], [`experiment`], [`trajectory`], [`pgm`]: the experiment
//!   harness behind the `snn-sense` binary.

pub mod activation;
pub mod assets;
pub mod config;
pub mod descent;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod linalg;
pub mod measurements;
pub mod model;
pub mod pgm;
pub mod rng;
pub mod trajectory;

pub use activation::ActivationFn;
pub use error::{Error, Result};
pub use linalg::{CompactSvd, Mat};
pub use measurements::{GroundTruth, MeasurementEnsemble};
pub use config::{parse_config, Experiment, ExperimentConfig};
pub use model::SnnParams;
pub use trajectory::{Trajectory, TrajectoryRow};
