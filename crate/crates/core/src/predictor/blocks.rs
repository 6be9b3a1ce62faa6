use candle_core::{Module, Tensor, D};
use candle_nn::{Conv2d, Linear, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{conv, linear, LayerNorm};

/// Convolutional fusion: a 1x1 branch and a 3x3 branch over the quality
/// map, concatenated to `target` channels.
#[derive(Clone, Debug)]
pub struct ChannelFusion {
    point: Conv2d,
    spatial: Conv2d,
    target: usize,
}

impl ChannelFusion {
    pub fn new(in_channels: usize, target: usize, vb: VarBuilder) -> Result<Self> {
        if in_channels == 0 {
            return Err(Error::invalid("fusion input must have at least one channel"));
        }
        if target < 2 {
            return Err(Error::invalid(format!("fusion target must be at least 2 channels, got {target}")));
        }
        Ok(Self {
            point: conv(in_channels, target.div_ceil(2), 1, 1, vb.pp("point"))?,
            spatial: conv(in_channels, target / 2, 3, 1, vb.pp("spatial"))?,
            target,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::cat(&[&self.point.forward(x)?, &self.spatial.forward(x)?], 1)?)
    }
}

/// Whether attention mixes spatial positions or channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Spatial,
    Channel,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Self::Spatial),
            "channel" => Ok(Self::Channel),
            other => Err(Error::config("attention_mode", format!("expected spatial or channel, got `{other}`"))),
        }
    }
}

fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Multi-head attention from query tokens `(N, Lq, C)` to key/value tokens
/// `(N, Lk, C)`.
#[derive(Clone, Debug)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    mode: AttentionMode,
    uniform: bool,
}

impl Attention {
    pub fn new(width: usize, heads: usize, mode: AttentionMode, vb: VarBuilder) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config("heads", format!("{heads} heads do not divide width {width}")));
        }
        Ok(Self {
            q: linear(width, width, vb.pp("q"))?,
            k: linear(width, width, vb.pp("k"))?,
            v: linear(width, width, vb.pp("v"))?,
            out: linear(width, width, vb.pp("out"))?,
            heads,
            mode,
            uniform: false,
        })
    }

    /// Replaces the attention weights by a uniform distribution.
    pub fn set_uniform(&mut self, uniform: bool) {
        self.uniform = uniform;
    }

    /// Applies the value and output projections only.
    pub fn project_value(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.out.forward(&self.v.forward(x)?)?)
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (n, l, c) = x.dims3()?;
        Ok(x.reshape((n, l, self.heads, c / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    pub fn forward(&self, query: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (n, lq, c) = query.dims3()?;
        let lk = context.dim(1)?;
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(context)?)?;
        let v = self.split_heads(&self.v.forward(context)?)?;
        let dh = c / self.heads;
        let mixed = match self.mode {
            AttentionMode::Spatial => {
                let weights = if self.uniform {
                    (Tensor::ones((n, self.heads, lq, lk), q.dtype(), q.device())? / lk as f64)?
                } else {
                    softmax_last(&(q.matmul(&k.t()?)? / (dh as f64).sqrt())?)?
                };
                weights.matmul(&v)?
            }
            AttentionMode::Channel => {
                if lq != lk {
                    return Err(Error::ShapeMismatch(format!(
                        "channel attention needs equal token counts, got {lq} and {lk}"
                    )));
                }
                let (qt, kt, vt) = (q.t()?.contiguous()?, k.t()?.contiguous()?, v.t()?.contiguous()?);
                let weights = if self.uniform {
                    (Tensor::ones((n, self.heads, dh, dh), q.dtype(), q.device())? / dh as f64)?
                } else {
                    softmax_last(&(qt.matmul(&kt.t()?)? / (lk as f64).sqrt())?)?
                };
                weights.matmul(&vt)?.t()?
            }
        };
        let merged = mixed.transpose(1, 2)?.contiguous()?.reshape((n, lq, c))?;
        Ok(self.out.forward(&merged)?)
    }
}

#[derive(Clone, Debug)]
struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    fn new(width: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            fc1: linear(width, hidden, vb.pp("fc1"))?,
            fc2: linear(hidden, width, vb.pp("fc2"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.fc2.forward(&self.fc1.forward(x)?.silu()?)?)
    }
}

/// Pre-norm transformer block. With `cross` the attention reads keys and
/// values from a separate context (the guidance block); otherwise it is
/// plain self-attention.
#[derive(Clone, Debug)]
pub struct Block {
    norm_q: LayerNorm,
    norm_kv: Option<LayerNorm>,
    attn: Attention,
    norm_mlp: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new(width: usize, heads: usize, mode: AttentionMode, cross: bool, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm_q: LayerNorm::new(width, vb.pp("norm_q"))?,
            norm_kv: if cross {
                Some(LayerNorm::new(width, vb.pp("norm_kv"))?)
            } else {
                None
            },
            attn: Attention::new(width, heads, mode, vb.pp("attn"))?,
            norm_mlp: LayerNorm::new(width, vb.pp("norm_mlp"))?,
            mlp: Mlp::new(width, 2 * width, vb.pp("mlp"))?,
        })
    }

    pub fn attention_mut(&mut self) -> &mut Attention {
        &mut self.attn
    }

    pub fn is_cross(&self) -> bool {
        self.norm_kv.is_some()
    }

    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let q = self.norm_q.forward(x)?;
        let a = match &self.norm_kv {
            Some(norm) => self.attn.forward(&q, &norm.forward(context)?)?,
            None => self.attn.forward(&q, &q)?,
        };
        let x = (x + a)?;
        Ok((&x + self.mlp.forward(&self.norm_mlp.forward(&x)?)?)?)
    }
}
