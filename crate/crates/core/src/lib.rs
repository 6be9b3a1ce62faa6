//! Dual-representation no-reference image quality assessment.
//!
//! One encoder produces a representation whose upper half is trained to be
//! degradation-aware and whose lower half is trained to be quality-aware.
//! Training runs in two stages: contrastive pretraining of the encoder on
//! synthetic degradation pairs, then joint training of the encoder, a
//! guided restoration network and a cross-attention score predictor.
//!
//! Modules that need automatic differentiation live behind the `nn`
//! feature; [`degrade`], [`eval`], [`toy`] and the contrastive bookkeeping in
//! [`dre`] are plain Rust and also build for `wasm32`.

pub mod buffer;
pub mod degrade;
pub mod dre;
pub mod error;
pub mod eval;
pub mod rng;
pub mod toy;

#[cfg(feature = "nn")]
pub mod nn;
#[cfg(feature = "nn")]
pub mod predictor;
#[cfg(feature = "nn")]
pub mod ram;
#[cfg(feature = "nn")]
pub mod trainer;
#[cfg(feature = "cli")]
pub mod cli;

pub use buffer::ImageBuffer;
pub use error::{Error, Result};
