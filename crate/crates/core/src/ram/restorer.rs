use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Linear, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{conv, small_linear, zero_conv, GroupNorm};

pub const NUM_SCALES: usize = 5;
/// Damps the residual so that early optimizer steps on the zero-initialized
/// tail move the output gently.
const TAIL_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestorerConfig {
    /// Full-resolution stem width.
    pub stem_width: usize,
    /// Width at each of the five scales.
    pub widths: [usize; NUM_SCALES],
    /// Channels of the reserved encoder features, one per scale.
    pub reserved_channels: [usize; NUM_SCALES],
    /// Length of the degradation-half vector driving the modulation.
    pub guide_dim: usize,
    pub groups: usize,
}

impl RestorerConfig {
    pub fn for_encoder(reserved_channels: [usize; NUM_SCALES], guide_dim: usize) -> Self {
        Self {
            stem_width: 16,
            widths: [16, 16, 32, 32, 64],
            reserved_channels,
            guide_dim,
            groups: 4,
        }
    }
}

/// How the restorer is conditioned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuidanceMode {
    /// Reserved-feature concatenation and channel-wise modulation.
    Full,
    /// Concatenation only; modulation skipped.
    ReservedOnly,
    /// Bare restorer: zeros in place of reserved features, no modulation.
    None,
}

/// Which conditioning reached one restorer stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceStep {
    pub scale: usize,
    pub decoder: bool,
    /// Reserved feature `(channels, height, width)` concatenated at this
    /// stage; encoder stages only.
    pub reserved: Option<(usize, usize, usize)>,
    pub modulated: bool,
}

#[derive(Clone, Debug)]
struct GatedBlock {
    norm: GroupNorm,
    expand: Conv2d,
    project: Conv2d,
}

impl GatedBlock {
    fn new(width: usize, groups: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm: GroupNorm::new(width, groups, vb.pp("norm"))?,
            expand: conv(width, 2 * width, 3, 1, vb.pp("expand"))?,
            project: conv(width, width, 1, 1, vb.pp("project"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.expand.forward(&self.norm.forward(x)?)?;
        let c = y.dim(1)? / 2;
        let gated = (y.narrow(1, 0, c)? * y.narrow(1, c, c)?)?;
        Ok((x + self.project.forward(&gated)?)?)
    }
}

/// Channel-wise affine modulation `h * (1 + scale(g)) + shift(g)`.
#[derive(Clone, Debug)]
struct Modulation {
    scale: Linear,
    shift: Linear,
}

impl Modulation {
    fn new(guide_dim: usize, width: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            scale: small_linear(guide_dim, width, 0.01, vb.pp("scale"))?,
            shift: small_linear(guide_dim, width, 0.01, vb.pp("shift"))?,
        })
    }

    fn forward(&self, h: &Tensor, guide: &Tensor) -> Result<Tensor> {
        let (n, c) = (h.dim(0)?, h.dim(1)?);
        let gamma = (self.scale.forward(guide)? + 1.0)?.reshape((n, c, 1, 1))?;
        let beta = self.shift.forward(guide)?.reshape((n, c, 1, 1))?;
        Ok(h.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    down: Conv2d,
    fuse: Conv2d,
    block: GatedBlock,
    modulation: Modulation,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: Conv2d,
    block: GatedBlock,
    modulation: Modulation,
}

/// A five-scale encoder-decoder restorer with skip connections and gated
/// conv blocks, conditioned per scale on reserved encoder features and on
/// the degradation half of the representation.
#[derive(Clone, Debug)]
pub struct Restorer {
    config: RestorerConfig,
    stem: Conv2d,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    merge: Conv2d,
    tail: Conv2d,
}

fn upsample_to(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, _, sh, sw) = x.dims4()?;
    if h % sh != 0 || w % sw != 0 || h / sh != w / sw {
        return Err(Error::ShapeMismatch(format!(
            "cannot upsample {sh}x{sw} to {h}x{w} by an integer factor"
        )));
    }
    Ok(x.upsample_nearest2d(h, w)?)
}

impl Restorer {
    pub fn new(config: &RestorerConfig, vb: VarBuilder) -> Result<Self> {
        let w = config.widths;
        let mut encoder = Vec::with_capacity(NUM_SCALES);
        let mut prev = config.stem_width;
        for s in 0..NUM_SCALES {
            let vb = vb.pp(format!("enc{s}"));
            encoder.push(EncoderLevel {
                down: conv(prev, w[s], 3, 2, vb.pp("down"))?,
                fuse: conv(w[s] + config.reserved_channels[s], w[s], 1, 1, vb.pp("fuse"))?,
                block: GatedBlock::new(w[s], config.groups, vb.pp("block"))?,
                modulation: Modulation::new(config.guide_dim, w[s], vb.pp("mod"))?,
            });
            prev = w[s];
        }
        let mut decoder = Vec::with_capacity(NUM_SCALES - 1);
        for s in 0..NUM_SCALES - 1 {
            let vb = vb.pp(format!("dec{s}"));
            decoder.push(DecoderLevel {
                up: conv(w[s + 1], w[s], 3, 1, vb.pp("up"))?,
                block: GatedBlock::new(w[s], config.groups, vb.pp("block"))?,
                modulation: Modulation::new(config.guide_dim, w[s], vb.pp("mod"))?,
            });
        }
        Ok(Self {
            config: config.clone(),
            stem: conv(3, config.stem_width, 3, 1, vb.pp("stem"))?,
            encoder,
            decoder,
            merge: conv(w[0], config.stem_width, 3, 1, vb.pp("merge"))?,
            tail: zero_conv(config.stem_width, 3, 3, vb.pp("tail"))?,
        })
    }

    pub fn config(&self) -> &RestorerConfig {
        &self.config
    }

    /// Restores `x` `(N, 3, H, W)`. `guide` is `(N, guide_dim)`; `reserved`
    /// holds the five encoder stage outputs for the same input.
    pub fn forward(
        &self,
        x: &Tensor,
        guide: &Tensor,
        reserved: &[Tensor],
        mode: GuidanceMode,
    ) -> Result<(Tensor, Vec<GuidanceStep>)> {
        if reserved.len() != NUM_SCALES {
            return Err(Error::ShapeMismatch(format!(
                "restorer needs {NUM_SCALES} reserved stages, got {}",
                reserved.len()
            )));
        }
        let (n, _, h, w) = x.dims4()?;
        if guide.dims2()? != (n, self.config.guide_dim) {
            return Err(Error::ShapeMismatch(format!(
                "guide vector must be ({n}, {}), got {:?}",
                self.config.guide_dim,
                guide.dims()
            )));
        }
        let modulate = mode == GuidanceMode::Full;
        let mut trace = Vec::with_capacity(2 * NUM_SCALES - 1);
        let stem = self.stem.forward(x)?;
        let mut cur = stem.clone();
        let mut skips = Vec::with_capacity(NUM_SCALES);
        for (s, level) in self.encoder.iter().enumerate() {
            cur = level.down.forward(&cur)?;
            let (_, _, ch, cw) = cur.dims4()?;
            let feat = &reserved[s];
            let (fnb, fc, fh, fw) = feat.dims4()?;
            if fnb != n || fc != self.config.reserved_channels[s] || fh != ch || fw != cw {
                return Err(Error::ShapeMismatch(format!(
                    "reserved stage {s} is {fnb}x{fc}x{fh}x{fw}, restorer expects {n}x{}x{ch}x{cw}",
                    self.config.reserved_channels[s]
                )));
            }
            let feat = match mode {
                GuidanceMode::None => feat.zeros_like()?,
                _ => feat.clone(),
            };
            cur = level.fuse.forward(&Tensor::cat(&[&cur, &feat], 1)?)?;
            cur = level.block.forward(&cur)?;
            if modulate {
                cur = level.modulation.forward(&cur, guide)?;
            }
            trace.push(GuidanceStep {
                scale: s,
                decoder: false,
                reserved: (mode != GuidanceMode::None).then_some((fc, fh, fw)),
                modulated: modulate,
            });
            skips.push(cur.clone());
        }
        for s in (0..NUM_SCALES - 1).rev() {
            let level = &self.decoder[s];
            let (_, _, sh, sw) = skips[s].dims4()?;
            cur = (level.up.forward(&upsample_to(&cur, sh, sw)?)? + &skips[s])?;
            cur = level.block.forward(&cur)?;
            if modulate {
                cur = level.modulation.forward(&cur, guide)?;
            }
            trace.push(GuidanceStep {
                scale: s,
                decoder: true,
                reserved: None,
                modulated: modulate,
            });
        }
        cur = (self.merge.forward(&upsample_to(&cur, h, w)?)? + stem)?;
        let restored = (x + (self.tail.forward(&cur)? * TAIL_SCALE)?)?.clamp(0.0, 1.0)?;
        Ok((restored, trace))
    }
}
