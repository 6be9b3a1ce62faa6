//! Tensor plumbing shared by the encoder, restorer and predictor.

pub mod layers;
mod optim;
mod params;

pub use optim::{cosine_lr, Adam};
pub use params::ParamStore;

use candle_core::{DType, Device, Tensor};

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

/// Stacks images of one size into an `(N, 3, H, W)` tensor.
pub fn images_to_tensor(images: &[&ImageBuffer], dtype: DType, dev: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot batch zero images"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        first.check_same_shape(img)?;
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), dev)?.to_dtype(dtype)?)
}

pub fn image_to_tensor(image: &ImageBuffer, dtype: DType, dev: &Device) -> Result<Tensor> {
    images_to_tensor(&[image], dtype, dev)
}

/// Splits an `(N, 3, H, W)` tensor back into images (values clamped).
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ImageBuffer>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("expected 3 channels, got {c}")));
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    flat.chunks(3 * h * w)
        .take(n)
        .map(|chunk| ImageBuffer::new(h, w, chunk.to_vec()))
        .collect()
}

/// Reads a scalar tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}
