//! Long-tail few-shot benchmarks with diverse supervision.
//!
//! The crate turns scene-parsing annotations into a long-tail few-shot
//! benchmark ([`benchgen`]), derives data-scarcity regimes ([`regimes`]),
//! trains region classifiers with auxiliary heads ([`backbone`], [`heads`],
//! [`trainer`]) and evaluates frozen features on novel classes ([`fewshot`]).

pub mod backbone;
pub mod benchgen;
pub mod datamodel;
pub mod fewshot;
pub mod error;
pub mod heads;
pub mod model;
pub mod nn;
pub mod raster;
pub mod regimes;
pub mod seeds;
pub mod source;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
