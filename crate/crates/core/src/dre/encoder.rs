use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Linear, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::dre::{DualRepresentation, FeatureMap, ReservedFeatures};
use crate::error::{Error, Result};
use crate::nn::layers::{conv, linear, to_tokens, GroupNorm};
use crate::nn::image_to_tensor;

pub const NUM_STAGES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DreConfig {
    /// Representation width D (even).
    pub dim: usize,
    /// Widths of the first four stages; the fifth stage has `dim` channels.
    pub channels: [usize; 4],
    pub min_input: usize,
    pub groups: usize,
}

impl Default for DreConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            channels: [16, 32, 64, 128],
            min_input: 64,
            groups: 4,
        }
    }
}

impl DreConfig {
    pub fn stage_channels(&self) -> [usize; NUM_STAGES] {
        let c = self.channels;
        [c[0], c[1], c[2], c[3], self.dim]
    }

    pub fn half(&self) -> usize {
        self.dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::config("dim", format!("must be a positive even integer, got {}", self.dim)));
        }
        if self.channels.contains(&0) {
            return Err(Error::config("channels", "stage widths must be positive"));
        }
        Ok(())
    }
}

/// Output of one encoder pass over a batch.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Pooled and projected representation, `(N, D)`.
    pub rep: Tensor,
    /// The same projection applied at every final-stage position, `(N, D, h, w)`.
    pub dual_map: Tensor,
    /// Pre-pool outputs of all five stages.
    pub reserved: Vec<Tensor>,
}

impl EncoderOutput {
    pub fn upper(&self) -> Result<Tensor> {
        let d = self.rep.dim(1)?;
        Ok(self.rep.narrow(1, 0, d / 2)?)
    }

    pub fn lower(&self) -> Result<Tensor> {
        let d = self.rep.dim(1)?;
        Ok(self.rep.narrow(1, d / 2, d / 2)?)
    }

    /// Quality half of the spatial map, `(N, D/2, h, w)`.
    pub fn lower_map(&self) -> Result<Tensor> {
        let d = self.dual_map.dim(1)?;
        Ok(self.dual_map.narrow(1, d / 2, d / 2)?)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2d,
    norm: GroupNorm,
}

impl Stage {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.norm.forward(&self.conv.forward(x)?)?.silu()
    }
}

/// Five strided conv stages, global average pooling and a linear
/// projection to `D` channels.
#[derive(Clone, Debug)]
pub struct DualRepresentationExtractor {
    config: DreConfig,
    stages: Vec<Stage>,
    proj: Linear,
}

impl DualRepresentationExtractor {
    pub fn new(config: &DreConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let widths = config.stage_channels();
        let mut stages = Vec::with_capacity(NUM_STAGES);
        let mut in_c = 3;
        for (i, &out_c) in widths.iter().enumerate() {
            let vb = vb.pp(format!("stage{i}"));
            stages.push(Stage {
                conv: conv(in_c, out_c, 3, 2, vb.pp("conv"))?,
                norm: GroupNorm::new(out_c, config.groups, vb.pp("norm"))?,
            });
            in_c = out_c;
        }
        Ok(Self {
            config: config.clone(),
            stages,
            proj: linear(config.dim, config.dim, vb.pp("proj"))?,
        })
    }

    pub fn config(&self) -> &DreConfig {
        &self.config
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        if height < self.config.min_input || width < self.config.min_input {
            return Err(Error::ImageTooSmall {
                height,
                width,
                min_height: self.config.min_input,
                min_width: self.config.min_input,
            });
        }
        Ok(())
    }

    /// Encodes an `(N, 3, H, W)` batch.
    pub fn forward(&self, x: &Tensor) -> Result<EncoderOutput> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("encoder expects 3 channels, got {c}")));
        }
        self.check_input(h, w)?;
        let mut reserved = Vec::with_capacity(NUM_STAGES);
        let mut cur = x.clone();
        for stage in &self.stages {
            cur = stage.forward(&cur)?;
            reserved.push(cur.clone());
        }
        let (n, d, fh, fw) = cur.dims4()?;
        let pooled = cur.mean(D::Minus1)?.mean(D::Minus1)?;
        let rep = self.proj.forward(&pooled)?;
        let dual_map = self
            .proj
            .forward(&to_tokens(&cur)?)?
            .transpose(1, 2)?
            .reshape((n, d, fh, fw))?;
        Ok(EncoderOutput {
            rep,
            dual_map,
            reserved,
        })
    }

    /// Encodes one image, returning host-side copies.
    pub fn encode(&self, image: &ImageBuffer, dtype: DType, dev: &Device) -> Result<(DualRepresentation, ReservedFeatures)> {
        self.check_input(image.height(), image.width())?;
        let out = self.forward(&image_to_tensor(image, dtype, dev)?)?;
        let values = out.rep.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let stages = out
            .reserved
            .iter()
            .map(|t| {
                let (_, c, h, w) = t.dims4()?;
                Ok(FeatureMap {
                    channels: c,
                    height: h,
                    width: w,
                    data: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((DualRepresentation::new(values)?, ReservedFeatures::new(stages)?))
    }
}
