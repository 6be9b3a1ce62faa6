//! Restoration assistance: a guided restorer and the losses that tie its
//! output back to the reference image and to the frozen extractor.

mod loss;
mod restorer;

pub use loss::{
    restoration_loss, rs_loss, FeatureExtractor, LossWeights, PerceptualProxy, PixelReduction, RestorationLoss,
    DEFAULT_LAMBDA, PERCEPTUAL_SEED,
};
pub use restorer::{GuidanceMode, GuidanceStep, Restorer, RestorerConfig, NUM_SCALES};

use candle_core::{DType, Device, Tensor};

use crate::buffer::ImageBuffer;
use crate::dre::ReservedFeatures;
use crate::error::{Error, Result};
use crate::nn::{image_to_tensor, tensor_to_images};

#[derive(Clone, Debug)]
pub struct RestorationOutput {
    pub restored: ImageBuffer,
    pub guidance_trace: Vec<GuidanceStep>,
}

/// Restores one image from host-side guidance.
pub fn restore(
    restorer: &Restorer,
    x: &ImageBuffer,
    upper_rep: &[f32],
    reserved: &ReservedFeatures,
    mode: GuidanceMode,
    dtype: DType,
    dev: &Device,
) -> Result<RestorationOutput> {
    let stages = reserved.stages();
    if stages.len() != NUM_SCALES {
        return Err(Error::ShapeMismatch(format!(
            "restorer needs {NUM_SCALES} reserved stages, got {}",
            stages.len()
        )));
    }
    let tensors = stages
        .iter()
        .map(|f| Ok(Tensor::from_vec(f.data.clone(), (1, f.channels, f.height, f.width), dev)?.to_dtype(dtype)?))
        .collect::<Result<Vec<_>>>()?;
    let guide = Tensor::from_vec(upper_rep.to_vec(), (1, upper_rep.len()), dev)?.to_dtype(dtype)?;
    let (out, guidance_trace) = restorer.forward(&image_to_tensor(x, dtype, dev)?, &guide, &tensors, mode)?;
    let restored = tensor_to_images(&out)?.remove(0);
    Ok(RestorationOutput {
        restored,
        guidance_trace,
    })
}
