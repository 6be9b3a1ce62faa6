use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use crate::dre::DualRepresentationExtractor;
use crate::error::{Error, Result};
use crate::nn::layers::conv;
use crate::nn::ParamStore;

/// Seed of the fixed perceptual feature extractor.
pub const PERCEPTUAL_SEED: u64 = 0x5045_5243_4550_5431;
pub const DEFAULT_LAMBDA: f64 = 0.01;

/// Reduction of the pixel term of the restoration loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelReduction {
    #[default]
    Mean,
    Sum,
}

impl std::str::FromStr for PixelReduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(Error::config("pixel_reduction", format!("expected mean or sum, got `{other}`"))),
        }
    }
}

/// Combination weights for the stage-2 objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_mse_score: f64,
    pub w_infonce: f64,
    pub w_restoration: f64,
    pub lambda_perceptual: f64,
    pub w_rs: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_mse_score: 1.0,
            w_infonce: 0.1,
            w_restoration: 0.1,
            lambda_perceptual: DEFAULT_LAMBDA,
            w_rs: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("w_mse_score", self.w_mse_score),
            ("w_infonce", self.w_infonce),
            ("w_restoration", self.w_restoration),
            ("lambda_perceptual", self.lambda_perceptual),
            ("w_rs", self.w_rs),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be a finite nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// A small conv feature extractor with frozen random weights, standing in
/// for a pretrained backbone in the perceptual term. Any type implementing
/// [`FeatureExtractor`] can replace it.
#[derive(Clone, Debug)]
pub struct PerceptualProxy {
    stages: Vec<Conv2d>,
}

pub trait FeatureExtractor {
    /// Feature maps of an `(N, 3, H, W)` batch.
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

impl PerceptualProxy {
    pub fn new(dtype: DType, dev: &Device) -> Result<Self> {
        let store = ParamStore::new(PERCEPTUAL_SEED);
        let vb = store.builder(dtype, dev);
        let widths = [3, 8, 16, 32];
        let stages = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| conv(w[0], w[1], 3, 2, vb.pp(format!("stage{i}"))))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { stages })
    }
}

impl FeatureExtractor for PerceptualProxy {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = stage.forward(&cur)?.tanh()?;
            out.push(cur.clone());
        }
        Ok(out)
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "restored is {:?} but reference is {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn squared_error(a: &Tensor, b: &Tensor, reduction: PixelReduction) -> Result<Tensor> {
    let sq = (a - b)?.sqr()?;
    Ok(match reduction {
        PixelReduction::Mean => sq.mean_all()?,
        PixelReduction::Sum => sq.sum_all()?,
    })
}

/// Components of the restoration loss (scalar tensors).
#[derive(Clone, Debug)]
pub struct RestorationLoss {
    pub pixel: Tensor,
    pub perceptual: Tensor,
    pub total: Tensor,
}

/// Pixel error plus `lambda` times the mean squared distance between the
/// extractor's features of the two images.
pub fn restoration_loss(
    restored: &Tensor,
    reference: &Tensor,
    lambda: f64,
    extractor: &dyn FeatureExtractor,
    reduction: PixelReduction,
) -> Result<RestorationLoss> {
    check_pair(restored, reference)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    let pixel = squared_error(restored, reference, reduction)?;
    let fr = extractor.features(restored)?;
    let ft = extractor.features(&reference.detach())?;
    let mut perceptual = Tensor::zeros((), restored.dtype(), restored.device())?;
    for (a, b) in fr.iter().zip(&ft) {
        perceptual = (perceptual + squared_error(a, b, PixelReduction::Mean)?)?;
    }
    let total = (&pixel + (&perceptual * lambda)?)?;
    Ok(RestorationLoss {
        pixel,
        perceptual,
        total,
    })
}

/// Batch mean of the Euclidean distance between the degradation halves of
/// `frozen`'s representations of `restored` and `reference`. The reference
/// branch is detached; `frozen` should be built on a store that no
/// optimizer owns.
pub fn rs_loss(restored: &Tensor, reference: &Tensor, frozen: &DualRepresentationExtractor) -> Result<Tensor> {
    check_pair(restored, reference)?;
    let up_res = frozen.forward(restored)?.upper()?;
    let up_ref = frozen.forward(&reference.detach())?.upper()?.detach();
    let d2 = (up_res - up_ref)?.sqr()?.sum(D::Minus1)?;
    // d2 / sqrt(d2 + eps) is exactly zero at equality and keeps the
    // gradient finite there.
    let dist = (&d2 / (&d2 + 1e-30)?.sqrt()?)?;
    Ok(dist.mean_all()?)
}
