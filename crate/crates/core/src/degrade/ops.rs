//! Pixel kernels for each degradation kind. Every kernel takes a valid
//! buffer and returns a buffer of the same shape with values in `[0, 1]`.

use image::codecs::jpeg::JpegEncoder;
use image::imageops::{self, FilterType};
use image::{ImageFormat, Rgb32FImage};
use rand_distr::{Distribution, Normal};

use crate::buffer::{ImageBuffer, CHANNELS};
use crate::error::{Error, Result};
use crate::rng;

/// Separable Gaussian blur with replicated borders. Accumulates in `f64`
/// with a normalized kernel, so constant images are reproduced exactly.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f32) -> ImageBuffer {
    let sigma = sigma.max(1e-3) as f64;
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (img.height(), img.width());
    let mut tmp = vec![0.0f32; img.data().len()];
    let mut out = vec![0.0f32; img.data().len()];
    for c in 0..CHANNELS {
        let src = img.plane(c);
        let base = c * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, wgt) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += wgt * src[y * w + xx] as f64;
                }
                tmp[base + y * w + x] = acc as f32;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, wgt) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += wgt * tmp[base + yy * w + x] as f64;
                }
                out[base + y * w + x] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::from_raw_unchecked(h, w, out)
}

/// Additive white Gaussian noise drawn from the stream `(seed, NOISE, step)`.
pub fn gaussian_noise(img: &ImageBuffer, sigma: f32, seed: u64, step: usize) -> ImageBuffer {
    let mut out = img.clone();
    if sigma <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0f32, sigma).expect("positive sigma");
    let mut r = rng::keyed(seed, &[rng::domain::NOISE, step as u64]);
    for v in out.data_mut() {
        *v += normal.sample(&mut r);
    }
    out.clamp_in_place();
    out
}

/// In-memory JPEG round trip through the `image` crate's baseline encoder
/// and its decoder. The codec is whatever `image` links; see
/// [`JPEG_CODEC`].
pub fn jpeg_compression(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    let rgb = img.to_rgb8();
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality.clamp(1, 100)).encode_image(&rgb)?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Jpeg)?.to_rgb8();
    if decoded.dimensions() != rgb.dimensions() {
        return Err(Error::ShapeMismatch("JPEG decode changed image size".into()));
    }
    Ok(ImageBuffer::from_rgb8(&decoded))
}

/// Identifies the codec used by [`jpeg_compression`] in recipe provenance.
pub const JPEG_CODEC: &str = "image-0.25/jpeg-encoder+zune-jpeg";

/// Downscale by `factor` with a triangle filter, then upscale back.
pub fn resize_rescale(img: &ImageBuffer, factor: f32) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let small_h = ((h as f32 * factor).round() as u32).max(1);
    let small_w = ((w as f32 * factor).round() as u32).max(1);
    let n = h * w;
    let data = img.data();
    let src = Rgb32FImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([data[i], data[n + i], data[2 * n + i]])
    });
    let small = imageops::resize(&src, small_w, small_h, FilterType::Triangle);
    let back = imageops::resize(&small, w as u32, h as u32, FilterType::Triangle);
    let mut out = vec![0.0f32; data.len()];
    for (x, y, p) in back.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..CHANNELS {
            out[c * n + i] = p.0[c].clamp(0.0, 1.0);
        }
    }
    ImageBuffer::from_raw_unchecked(h, w, out)
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Scales chroma around per-pixel luma.
pub fn saturation_shift(img: &ImageBuffer, scale: f32) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let d = img.data();
    let mut out = vec![0.0f32; d.len()];
    for i in 0..n {
        let y = luma(d[i], d[n + i], d[2 * n + i]);
        for c in 0..CHANNELS {
            out[c * n + i] = (y + scale * (d[c * n + i] - y)).clamp(0.0, 1.0);
        }
    }
    ImageBuffer::from_raw_unchecked(h, w, out)
}

/// Scales every channel around the image's mean luma.
pub fn contrast_change(img: &ImageBuffer, scale: f32) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let d = img.data();
    let mean = (0..n)
        .map(|i| luma(d[i], d[n + i], d[2 * n + i]) as f64)
        .sum::<f64>()
        / n as f64;
    let mean = mean as f32;
    let out = d
        .iter()
        .map(|&v| (mean + scale * (v - mean)).clamp(0.0, 1.0))
        .collect();
    ImageBuffer::from_raw_unchecked(h, w, out)
}
