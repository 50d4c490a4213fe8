//! Graph component analysis: recovering latent node vectors from synthetic
//! graph data by density-ratio estimation with a Donsker-Varadhan objective,
//! plus an energy-based baseline, evaluation metrics, an identifiability
//! condition checker and an experiment harness.

pub mod adam;
pub mod autodiff;
pub mod ebm;
pub mod error;
pub mod eval;
pub mod gca;
pub mod harness;
pub mod io;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod synthdata;
pub mod theory;

pub use adam::AdamState;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{Activation, MlpSpec, ParamStore};
pub use synthdata::{GraphDataset, LatentConfig, LatentKind, LinkModel, MixingNetwork};
