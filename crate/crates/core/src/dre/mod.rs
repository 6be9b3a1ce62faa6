//! The dual-representation extractor: one encoder whose output is split
//! positionally into a degradation-aware upper half and a quality-aware
//! lower half, plus the contrastive objective that shapes the two halves.

pub mod contrastive;
#[cfg(feature = "nn")]
mod encoder;
#[cfg(feature = "nn")]
mod loss;
#[cfg(feature = "nn")]
pub mod probe;

pub use contrastive::{
    build_contrastive_batch, info_nce as info_nce_reference, split_representation, ContrastiveBatch,
    PatchRef, Triplet, View,
};
#[cfg(feature = "nn")]
pub use encoder::{DreConfig, DualRepresentationExtractor, EncoderOutput, NUM_STAGES};
#[cfg(feature = "nn")]
pub use loss::{
    dual_contrastive_loss, dual_contrastive_loss_with_keys, half_info_nce, half_info_nce_with_keys, info_nce,
    normalize_rows, DualContrastiveLoss,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `D`-vector whose first half is the degradation representation and
/// whose second half is the quality representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualRepresentation {
    values: Vec<f32>,
}

impl DualRepresentation {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::invalid(format!(
                "representation dimension {} must be positive and even",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("representation has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn upper(&self) -> &[f32] {
        &self.values[..self.values.len() / 2]
    }

    pub fn lower(&self) -> &[f32] {
        &self.values[self.values.len() / 2..]
    }
}

/// One encoder stage output, `channels x height x width`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Per-stage features kept for layer-by-layer restoration guidance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservedFeatures {
    stages: Vec<FeatureMap>,
}

impl ReservedFeatures {
    pub const STAGES: usize = 5;

    pub fn new(stages: Vec<FeatureMap>) -> Result<Self> {
        if stages.len() != Self::STAGES {
            return Err(Error::ShapeMismatch(format!(
                "expected {} reserved stages, got {}",
                Self::STAGES,
                stages.len()
            )));
        }
        for w in stages.windows(2) {
            if w[1].height > w[0].height || w[1].width > w[0].width {
                return Err(Error::ShapeMismatch(
                    "reserved feature sizes must be non-increasing across stages".into(),
                ));
            }
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[FeatureMap] {
        &self.stages
    }
}
