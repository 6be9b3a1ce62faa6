//! Quality-score prediction: image features attended by the quality half
//! of the dual representation, and multi-crop inference.

mod blocks;

pub use blocks::{AttentionMode, Attention, Block, ChannelFusion};

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Linear, VarBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::dre::{DreConfig, DualRepresentationExtractor};
use crate::error::{Error, Result};
use crate::nn::layers::{conv, linear, sinusoidal_2d, to_tokens, GroupNorm, LayerNorm};
use crate::nn::images_to_tensor;
use crate::rng::{self, domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Width C of image features and attention tokens.
    pub width: usize,
    pub heads: usize,
    /// Number of (guidance block, transformer block) pairs.
    pub depth: usize,
    pub positional_encoding: bool,
    pub attention_mode: AttentionMode,
    /// Channels of the quality half fed to the fusion.
    pub quality_channels: usize,
    /// Initial value of the score head's output bias.
    pub score_offset: f64,
    pub crop: usize,
    pub n_crops: usize,
}

impl PredictorConfig {
    pub fn for_encoder(dre: &DreConfig) -> Self {
        Self {
            width: 128,
            heads: 4,
            depth: 2,
            positional_encoding: true,
            attention_mode: AttentionMode::Spatial,
            quality_channels: dre.half(),
            score_offset: 3.0,
            crop: 64,
            n_crops: 9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.width % 4 != 0 {
            return Err(Error::config("width", format!("must be a multiple of 4 and at least 8, got {}", self.width)));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config("heads", format!("{} heads do not divide width {}", self.heads, self.width)));
        }
        if self.n_crops == 0 {
            return Err(Error::config("n_crops", "must be positive"));
        }
        Ok(())
    }
}

/// Image features and the fused quality queries, both as token sequences
/// `(N, L, C)`.
#[derive(Clone, Debug)]
pub struct GuidedFeatures {
    pub image_tokens: Tensor,
    pub query_tokens: Tensor,
}

#[derive(Clone, Debug)]
struct StemStage {
    conv: Conv2d,
    norm: GroupNorm,
}

/// Guidance blocks alternate with transformer blocks; a two-layer MLP on
/// the pooled tokens regresses the score.
#[derive(Clone, Debug)]
pub struct Predictor {
    config: PredictorConfig,
    stem: Vec<StemStage>,
    fusion: ChannelFusion,
    blocks: Vec<Block>,
    norm_out: LayerNorm,
    head_hidden: Linear,
    head_out: Linear,
}

impl Predictor {
    pub fn new(config: &PredictorConfig, vb: VarBuilder) -> Result<Self> {
        config.validate()?;
        let c = config.width;
        let widths = [3, c / 4, c / 2, c];
        let stem = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let vb = vb.pp(format!("stem{i}"));
                Ok(StemStage {
                    conv: conv(w[0], w[1], 3, 2, vb.pp("conv"))?,
                    norm: GroupNorm::new(w[1], 4, vb.pp("norm"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut blocks = Vec::with_capacity(2 * config.depth);
        for i in 0..config.depth {
            blocks.push(Block::new(c, config.heads, config.attention_mode, true, vb.pp(format!("tgb{i}")))?);
            blocks.push(Block::new(c, config.heads, config.attention_mode, false, vb.pp(format!("stb{i}")))?);
        }
        let head_out = {
            let vb = vb.pp("head_out");
            // Small weights keep initial scores near the offset.
            let w = vb.get_with_hints((1, c / 2), "weight", candle_nn::Init::Randn { mean: 0.0, stdev: 0.01 })?;
            let b = vb.get_with_hints(1, "bias", candle_nn::Init::Const(config.score_offset))?;
            Linear::new(w, Some(b))
        };
        Ok(Self {
            config: config.clone(),
            stem,
            fusion: ChannelFusion::new(config.quality_channels, c, vb.pp("fusion"))?,
            blocks,
            norm_out: LayerNorm::new(c, vb.pp("norm_out"))?,
            head_hidden: linear(c, c / 2, vb.pp("head_hidden"))?,
            head_out,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    /// Forces uniform attention weights in every block.
    pub fn set_uniform_attention(&mut self, uniform: bool) {
        for b in &mut self.blocks {
            b.attention_mut().set_uniform(uniform);
        }
    }

    fn with_position(&self, map: &Tensor) -> Result<Tensor> {
        let tokens = to_tokens(map)?;
        if !self.config.positional_encoding {
            return Ok(tokens);
        }
        let (_, c, h, w) = map.dims4()?;
        let pe = sinusoidal_2d(h, w, c, map.dtype(), map.device())?;
        Ok(tokens.broadcast_add(&pe)?)
    }

    /// Stem features of `(N, 3, H, W)` images at `H/8`.
    pub fn image_map(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for s in &self.stem {
            cur = s.norm.forward(&s.conv.forward(&cur)?)?.silu()?;
        }
        Ok(cur)
    }

    /// `lower_map` is the quality half of the encoder's spatial map.
    pub fn guided_features(&self, x: &Tensor, lower_map: &Tensor) -> Result<GuidedFeatures> {
        let (n, qc, qh, qw) = lower_map.dims4()?;
        if qc != self.config.quality_channels {
            return Err(Error::ShapeMismatch(format!(
                "predictor expects a {}-channel quality map, got {qc}; encoder and predictor configs differ",
                self.config.quality_channels
            )));
        }
        if x.dim(0)? != n {
            return Err(Error::ShapeMismatch("image and quality map batch sizes differ".into()));
        }
        let mut image = self.image_map(x)?;
        if self.config.attention_mode == AttentionMode::Channel {
            let (_, _, h, w) = image.dims4()?;
            if h % qh != 0 || w % qw != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "cannot pool {h}x{w} image features to the {qh}x{qw} quality map"
                )));
            }
            image = image.avg_pool2d((h / qh, w / qw))?;
        }
        Ok(GuidedFeatures {
            image_tokens: self.with_position(&image)?,
            query_tokens: self.with_position(&self.fusion.forward(lower_map)?)?,
        })
    }

    /// Scores `(N,)` from token sequences.
    pub fn score_tokens(&self, features: &GuidedFeatures) -> Result<Tensor> {
        let mut q = features.query_tokens.clone();
        for b in &self.blocks {
            q = b.forward(&q, &features.image_tokens)?;
        }
        self.head(&self.norm_out.forward(&q)?.mean(1)?)
    }

    /// The regression head on pooled `(N, C)` tokens.
    pub fn head(&self, pooled: &Tensor) -> Result<Tensor> {
        let h = self.head_hidden.forward(pooled)?.silu()?;
        Ok(self.head_out.forward(&h)?.squeeze(D::Minus1)?)
    }

    pub fn forward(&self, x: &Tensor, lower_map: &Tensor) -> Result<Tensor> {
        self.score_tokens(&self.guided_features(x, lower_map)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePrediction {
    pub score: f64,
    pub per_crop_scores: Vec<f64>,
    pub crop_count: usize,
}

/// The encoder and predictor used together at inference.
#[derive(Clone, Debug)]
pub struct QualityModel {
    pub dre: DualRepresentationExtractor,
    pub predictor: Predictor,
}

impl QualityModel {
    pub fn new(dre: DualRepresentationExtractor, predictor: Predictor) -> Result<Self> {
        if dre.config().half() != predictor.config().quality_channels {
            return Err(Error::config(
                "dim",
                format!(
                    "encoder quality half has {} channels, predictor expects {}",
                    dre.config().half(),
                    predictor.config().quality_channels
                ),
            ));
        }
        Ok(Self { dre, predictor })
    }

    /// Scores an `(N, 3, H, W)` batch, each image on its own encoding.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let enc = self.dre.forward(x)?;
        self.predictor.forward(x, &enc.lower_map()?)
    }

    pub fn guided_score(&self, image: &ImageBuffer, dtype: DType, dev: &Device) -> Result<f64> {
        self.score_images(&[image], dtype, dev).map(|v| v[0])
    }

    pub fn score_images(&self, images: &[&ImageBuffer], dtype: DType, dev: &Device) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let x = images_to_tensor(chunk, dtype, dev)?;
            out.extend(self.forward(&x)?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }
}

/// Top-left corners of `n_crops` seeded crops.
pub fn crop_positions(height: usize, width: usize, crop: usize, n_crops: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if height < crop || width < crop {
        return Err(Error::ImageTooSmall {
            height,
            width,
            min_height: crop,
            min_width: crop,
        });
    }
    Ok((0..n_crops)
        .map(|k| {
            let mut r = rng::keyed(seed, &[domain::CROP, k as u64]);
            (r.random_range(0..=height - crop), r.random_range(0..=width - crop))
        })
        .collect())
}

/// Mean score over `n_crops` seeded random crops.
pub fn predict_mos(
    model: &QualityModel,
    image: &ImageBuffer,
    crop: usize,
    n_crops: usize,
    seed: u64,
    dtype: DType,
    dev: &Device,
) -> Result<ScorePrediction> {
    if n_crops == 0 {
        return Err(Error::invalid("n_crops must be positive"));
    }
    model.dre.check_input(crop, crop)?;
    let crops = crop_positions(image.height(), image.width(), crop, n_crops, seed)?
        .into_iter()
        .map(|(y, x)| image.crop(y, x, crop, crop))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ImageBuffer> = crops.iter().collect();
    let per_crop_scores = model.score_images(&refs, dtype, dev)?;
    if per_crop_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Degenerate("predictor produced a non-finite score".into()));
    }
    let score = per_crop_scores.iter().sum::<f64>() / n_crops as f64;
    Ok(ScorePrediction {
        score,
        per_crop_scores,
        crop_count: n_crops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn model(seed: u64, dtype: DType) -> QualityModel {
        let store = ParamStore::new(seed);
        let vb = store.builder(dtype, &Device::Cpu);
        let cfg = DreConfig::default();
        let dre = DualRepresentationExtractor::new(&cfg, vb.pp("dre")).unwrap();
        let pred = Predictor::new(&PredictorConfig::for_encoder(&cfg), vb.pp("pred")).unwrap();
        QualityModel::new(dre, pred).unwrap()
    }

    #[test]
    fn single_crop_equals_guided_score() {
        let m = model(1, DType::F32);
        let img = crate::toy::clean_image(4, 80, 72);
        let p = predict_mos(&m, &img, 64, 1, 9, DType::F32, &Device::Cpu).unwrap();
        let (y, x) = crop_positions(80, 72, 64, 1, 9).unwrap()[0];
        let direct = m.guided_score(&img.crop(y, x, 64, 64).unwrap(), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(p.score, direct);
        assert_eq!(p.crop_count, 1);
    }

    #[test]
    fn deterministic_and_mean_contract() {
        let m = model(2, DType::F32);
        let img = crate::toy::clean_image(5, 96, 96);
        let a = predict_mos(&m, &img, 64, 9, 3, DType::F32, &Device::Cpu).unwrap();
        let b = predict_mos(&m, &img, 64, 9, 3, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(a, b);
        let mean = a.per_crop_scores.iter().sum::<f64>() / 9.0;
        assert!((a.score - mean).abs() < 1e-9);
    }

    #[test]
    fn constant_image_gives_equal_crops() {
        let m = model(3, DType::F32);
        let img = ImageBuffer::constant(100, 100, [0.3, 0.5, 0.7]);
        let p = predict_mos(&m, &img, 64, 25, 1, DType::F32, &Device::Cpu).unwrap();
        assert!(p.per_crop_scores.iter().all(|s| *s == p.per_crop_scores[0]));
    }

    #[test]
    fn small_image_names_required_size() {
        let m = model(3, DType::F32);
        let img = crate::toy::clean_image(1, 48, 100);
        let err = predict_mos(&m, &img, 64, 2, 0, DType::F32, &Device::Cpu).unwrap_err();
        assert!(err.to_string().contains("64x64"), "{err}");
    }

    #[test]
    fn mismatched_quality_channels_rejected() {
        let store = ParamStore::new(0);
        let vb = store.builder(DType::F32, &Device::Cpu);
        let cfg = DreConfig::default();
        let dre = DualRepresentationExtractor::new(&cfg, vb.pp("dre")).unwrap();
        let small = DreConfig { dim: 32, ..cfg };
        let pred = Predictor::new(&PredictorConfig::for_encoder(&small), vb.pp("pred")).unwrap();
        assert!(QualityModel::new(dre, pred).is_err());
    }
}
