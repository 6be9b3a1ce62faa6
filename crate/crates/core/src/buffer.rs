use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// An RGB image with planar (channel-major) `f32` storage in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// Wraps planar CHW data. Values are validated for finiteness and
    /// clamped to `[0, 1]`.
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {height}x{width} RGB image, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinitePixel(i));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Re-checks finiteness of every value.
    pub fn validate(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinitePixel(i)),
            None => Ok(()),
        }
    }

    pub fn constant(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c.clamp(0.0, 1.0), height * width));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    let v = f(c, y, x);
                    data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Writes unclamped values; callers must clamp before returning the buffer.
    pub(crate) fn from_raw_unchecked(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), CHANNELS * height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Mean squared difference over all channels.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let n = self.height * self.width;
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            image::Rgb([
                quantize(self.data[i]),
                quantize(self.data[n + i]),
                quantize(self.data[2 * n + i]),
            ])
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; CHANNELS * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            let i = y as usize * w + x as usize;
            for c in 0..CHANNELS {
                data[c * h * w + i] = p.0[c] as f32 / 255.0;
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    /// Saves as PNG (format chosen from the extension by the `image` crate).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let mut data = vec![0.5; 12];
        data[5] = f32::NAN;
        assert!(matches!(
            ImageBuffer::new(2, 2, data),
            Err(Error::NonFinitePixel(5))
        ));
    }

    #[test]
    fn clamps_on_construction() {
        let img = ImageBuffer::new(1, 1, vec![-1.0, 0.5, 3.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn crop_picks_the_right_window() {
        let img = ImageBuffer::from_fn(4, 4, |c, y, x| (c * 16 + y * 4 + x) as f32 / 64.0);
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.get(0, 0, 0), img.get(0, 1, 2));
        assert_eq!(c.get(2, 1, 1), img.get(2, 2, 3));
        assert!(img.crop(3, 3, 2, 2).is_err());
    }

    #[test]
    fn rgb8_round_trip_is_within_quantization() {
        let img = ImageBuffer::from_fn(3, 5, |c, y, x| ((c + y * 3 + x) % 7) as f32 / 6.0);
        let back = ImageBuffer::from_rgb8(&img.to_rgb8());
        assert!(img.mse(&back).unwrap() < 1e-5);
    }
}
