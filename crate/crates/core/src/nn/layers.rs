use candle_core::{DType, Device, Module, Result, Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear, VarBuilder};

/// Group normalization over `(N, C, H, W)`, composed of differentiable
/// primitives.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    weight: Tensor,
    bias: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize, vb: VarBuilder) -> Result<Self> {
        let groups = largest_divisor_at_most(channels, groups);
        Ok(Self {
            weight: vb.get_with_hints(channels, "weight", candle_nn::init::ONE)?,
            bias: vb.get_with_hints(channels, "bias", candle_nn::init::ZERO)?,
            groups,
            eps: 1e-5,
        })
    }
}

fn largest_divisor_at_most(n: usize, k: usize) -> usize {
    (1..=k.min(n).max(1)).rev().find(|g| n % g == 0).unwrap_or(1)
}

impl Module for GroupNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = x.reshape((n, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .reshape((n, c, h, w))?;
        normed
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)
    }
}

/// Layer normalization over the last dimension.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(dim, "weight", candle_nn::init::ONE)?,
            bias: vb.get_with_hints(dim, "bias", candle_nn::init::ZERO)?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)
    }
}

pub fn conv(in_c: usize, out_c: usize, kernel: usize, stride: usize, vb: VarBuilder) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: kernel / 2,
        stride,
        ..Default::default()
    };
    candle_nn::conv2d(in_c, out_c, kernel, cfg, vb)
}

/// A convolution whose weight and bias start at zero.
pub fn zero_conv(in_c: usize, out_c: usize, kernel: usize, vb: VarBuilder) -> Result<Conv2d> {
    let w = vb.get_with_hints((out_c, in_c, kernel, kernel), "weight", candle_nn::init::ZERO)?;
    let b = vb.get_with_hints(out_c, "bias", candle_nn::init::ZERO)?;
    Ok(Conv2d::new(
        w,
        Some(b),
        Conv2dConfig {
            padding: kernel / 2,
            ..Default::default()
        },
    ))
}

pub fn linear(in_d: usize, out_d: usize, vb: VarBuilder) -> Result<Linear> {
    candle_nn::linear(in_d, out_d, vb)
}

/// A linear map with small Gaussian weights and zero bias.
pub fn small_linear(in_d: usize, out_d: usize, std: f64, vb: VarBuilder) -> Result<Linear> {
    let w = vb.get_with_hints((out_d, in_d), "weight", candle_nn::Init::Randn { mean: 0.0, stdev: std })?;
    let b = vb.get_with_hints(out_d, "bias", candle_nn::init::ZERO)?;
    Ok(Linear::new(w, Some(b)))
}

/// `(N, C, H, W) -> (N, H*W, C)`
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    x.reshape((n, c, h * w))?.transpose(1, 2)?.contiguous()
}

/// Fixed 2-D sinusoidal positional encoding, `(H*W, C)`.
pub fn sinusoidal_2d(h: usize, w: usize, c: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let mut data = vec![0.0f64; h * w * c];
    let quarter = (c / 4).max(1);
    for y in 0..h {
        for x in 0..w {
            let row = &mut data[(y * w + x) * c..(y * w + x + 1) * c];
            for (k, slot) in row.iter_mut().enumerate() {
                let band = (k % quarter) as f64;
                let freq = 1.0 / 10000f64.powf(band / quarter as f64);
                *slot = match (k / quarter) % 4 {
                    0 => (y as f64 * freq).sin(),
                    1 => (y as f64 * freq).cos(),
                    2 => (x as f64 * freq).sin(),
                    _ => (x as f64 * freq).cos(),
                };
            }
        }
    }
    Tensor::from_vec(data, (h * w, c), dev)?.to_dtype(dtype)
}
