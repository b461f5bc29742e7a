//! n-network cross pseudo supervision (n-CPS) for semi-supervised semantic
//! segmentation at desk scale.
//!
//! The crate contains everything a training run needs: a small reverse-mode
//! autodiff core ([`diffcore`]), the tiny segmentation net and its ensemble
//! ([`segmodel`]), pseudo-labels and CutMix ([`pseudo`]), the loss terms
//! ([`losses`]), the training procedures ([`trainer`]), ensemble fusion at
//! inference ([`ensemble`]), a synthetic dataset ([`synthdata`]) and mIoU
//! ([`metrics`]).

pub mod diffcore;
pub mod ensemble;
mod error;
pub mod losses;
pub mod metrics;
pub mod pseudo;
pub mod rng;
pub mod segmodel;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
