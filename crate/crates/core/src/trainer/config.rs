//! Flat `key: value` training configuration with a strict schema.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! duplicate keys and values of the wrong type are rejected with the key
//! named. Keys not given take their defaults, which depend on `stage`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::degrade::Palette;
use crate::error::{Error, Result};
use crate::predictor::AttentionMode;
use crate::ram::{LossWeights, PixelReduction};

/// The ablation ladder for stage 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Score regression from the quality half only.
    V1,
    /// Adds the dual contrastive term.
    V2,
    /// Adds the restoration branch.
    V3,
    /// Adds the representation-based semantic loss.
    Proposed,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::V1, Ablation::V2, Ablation::V3, Ablation::Proposed];

    pub fn uses_contrastive(self) -> bool {
        self != Ablation::V1
    }

    pub fn uses_restoration(self) -> bool {
        matches!(self, Ablation::V3 | Ablation::Proposed)
    }

    pub fn uses_rs(self) -> bool {
        self == Ablation::Proposed
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::V1 => "v1",
            Ablation::V2 => "v2",
            Ablation::V3 => "v3",
            Ablation::Proposed => "proposed",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Ablation::V1),
            "v2" => Ok(Ablation::V2),
            "v3" => Ok(Ablation::V3),
            "proposed" => Ok(Ablation::Proposed),
            _ => Err(Error::config("ablation", format!("expected v1, v2, v3 or proposed, got `{s}`"))),
        }
    }
}

/// Floating-point precision of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub t_max: usize,
    pub eta_min: f64,
    pub seed: u64,
    pub tau: f64,
    pub dim: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Stage 1: contrastive pairs drawn per corpus image per epoch.
    pub pairs_per_image: usize,
    pub crop: usize,
    pub n_crops: usize,
    /// Stage 1: EMA momentum of a key encoder; 0 uses in-batch keys from
    /// the trained encoder itself.
    pub momentum: f64,
    /// Path of a palette JSON file, or `default`.
    pub palette: String,
    pub ablation: Ablation,
    pub loss_weights: LossWeights,
    pub pixel_reduction: PixelReduction,
    /// Stage 2: distinct references per batch used to regenerate
    /// contrastive pairs.
    pub contrastive_sources: usize,
    pub predictor_width: usize,
    pub heads: usize,
    pub depth: usize,
    pub attention_mode: AttentionMode,
    pub positional_encoding: bool,
    pub queue_depth: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_stage(1)
    }
}

const KEYS: &[&str] = &[
    "stage",
    "lr",
    "batch",
    "epochs",
    "weight_decay",
    "t_max",
    "eta_min",
    "seed",
    "tau",
    "dim",
    "grad_clip",
    "pairs_per_image",
    "crop",
    "n_crops",
    "momentum",
    "palette",
    "ablation",
    "w_mse_score",
    "w_infonce",
    "w_restoration",
    "lambda_perceptual",
    "w_rs",
    "pixel_reduction",
    "contrastive_sources",
    "predictor_width",
    "heads",
    "depth",
    "attention_mode",
    "positional_encoding",
    "queue_depth",
    "precision",
];

fn parse<T: FromStr>(key: &str, raw: &str, expected: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| Error::config(key, format!("expected {expected}, got `{raw}`")))
}

impl TrainConfig {
    /// Defaults for one stage: learning rate 2e-4, weight decay 1e-8,
    /// cosine schedule with T_max 300 and eta_min 1e-6; batch 64 and 300
    /// epochs for stage 1, batch 16 and 200 epochs for stage 2.
    pub fn for_stage(stage: u8) -> Self {
        let (batch, epochs) = if stage == 2 { (16, 200) } else { (64, 300) };
        Self {
            stage,
            lr: 2e-4,
            batch,
            epochs,
            weight_decay: 1e-8,
            t_max: 300,
            eta_min: 1e-6,
            seed: 0,
            tau: 0.07,
            dim: 128,
            grad_clip: 1.0,
            pairs_per_image: 1,
            crop: 64,
            n_crops: 9,
            momentum: 0.0,
            palette: "default".into(),
            ablation: Ablation::Proposed,
            loss_weights: LossWeights::default(),
            pixel_reduction: PixelReduction::Mean,
            contrastive_sources: 4,
            predictor_width: 128,
            heads: 4,
            depth: 2,
            attention_mode: AttentionMode::Spatial,
            positional_encoding: true,
            queue_depth: 4,
            precision: Precision::F32,
        }
    }

    /// The palette named by the `palette` key: the six default kinds, or a
    /// JSON file of entries.
    pub fn load_palette(&self) -> Result<Palette> {
        if self.palette == "default" {
            return Ok(Palette::default_six());
        }
        let text = std::fs::read_to_string(&self.palette)
            .map_err(|e| Error::config("palette", format!("cannot read `{}`: {e}", self.palette)))?;
        Palette::from_json(&text)
    }

    pub fn grad_clip(&self) -> Option<f64> {
        (self.grad_clip > 0.0).then_some(self.grad_clip)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        const UINT: &str = "a nonnegative integer";
        const REAL: &str = "a real number";
        let w = &mut self.loss_weights;
        match key {
            "stage" => self.stage = parse(key, raw, "1 or 2")?,
            "lr" => self.lr = parse(key, raw, REAL)?,
            "batch" => self.batch = parse(key, raw, UINT)?,
            "epochs" => self.epochs = parse(key, raw, UINT)?,
            "weight_decay" => self.weight_decay = parse(key, raw, REAL)?,
            "t_max" => self.t_max = parse(key, raw, UINT)?,
            "eta_min" => self.eta_min = parse(key, raw, REAL)?,
            "seed" => self.seed = parse(key, raw, UINT)?,
            "tau" => self.tau = parse(key, raw, REAL)?,
            "dim" => self.dim = parse(key, raw, UINT)?,
            "grad_clip" => self.grad_clip = parse(key, raw, REAL)?,
            "pairs_per_image" => self.pairs_per_image = parse(key, raw, UINT)?,
            "crop" => self.crop = parse(key, raw, UINT)?,
            "n_crops" => self.n_crops = parse(key, raw, UINT)?,
            "momentum" => self.momentum = parse(key, raw, REAL)?,
            "palette" => self.palette = raw.to_string(),
            "ablation" => self.ablation = raw.parse()?,
            "w_mse_score" => w.w_mse_score = parse(key, raw, REAL)?,
            "w_infonce" => w.w_infonce = parse(key, raw, REAL)?,
            "w_restoration" => w.w_restoration = parse(key, raw, REAL)?,
            "lambda_perceptual" => w.lambda_perceptual = parse(key, raw, REAL)?,
            "w_rs" => w.w_rs = parse(key, raw, REAL)?,
            "pixel_reduction" => self.pixel_reduction = raw.parse()?,
            "contrastive_sources" => self.contrastive_sources = parse(key, raw, UINT)?,
            "predictor_width" => self.predictor_width = parse(key, raw, UINT)?,
            "heads" => self.heads = parse(key, raw, UINT)?,
            "depth" => self.depth = parse(key, raw, UINT)?,
            "attention_mode" => self.attention_mode = raw.parse()?,
            "positional_encoding" => self.positional_encoding = parse(key, raw, "true or false")?,
            "queue_depth" => self.queue_depth = parse(key, raw, UINT)?,
            "precision" => {
                self.precision = match raw {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::config(key, format!("expected f32 or f64, got `{raw}`"))),
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::config("stage", format!("must be 1 or 2, got {}", self.stage)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be positive, got {}", self.lr)));
        }
        let min_batch = if self.stage == 1 { 2 } else { 1 };
        if self.batch < min_batch {
            return Err(Error::config(
                "batch",
                format!("must be at least {min_batch} for stage {}, got {}", self.stage, self.batch),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be nonnegative"));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.lr) {
            return Err(Error::config("eta_min", "must lie in [0, lr]"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau", format!("must be positive, got {}", self.tau)));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::config("dim", format!("must be a positive even integer, got {}", self.dim)));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip", "must be nonnegative (0 disables clipping)"));
        }
        if self.pairs_per_image == 0 {
            return Err(Error::config("pairs_per_image", "must be at least 1"));
        }
        if self.crop < 32 || self.crop % 32 != 0 {
            return Err(Error::config(
                "crop",
                format!("must be a positive multiple of 32 (five stride-2 stages), got {}", self.crop),
            ));
        }
        if self.n_crops == 0 {
            return Err(Error::config("n_crops", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.queue_depth == 0 {
            return Err(Error::config("queue_depth", "must be at least 1"));
        }
        self.loss_weights.validate()
    }

    /// Parses configuration text. An empty text yields the stage-1
    /// defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(':').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), format!("expected `key: value`, got `{line}`"))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::config(k, "unknown key"));
            }
            if pairs.iter().any(|(p, _)| *p == k) {
                return Err(Error::config(k, "given more than once"));
            }
            pairs.push((k, v));
        }
        let stage = match pairs.iter().find(|(k, _)| k == "stage") {
            Some((_, v)) => parse::<u8>("stage", v, "1 or 2")?,
            None => 1,
        };
        let mut cfg = Self::for_stage(stage);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value, in schema order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let w = &self.loss_weights;
        let values = [
            self.stage.to_string(),
            self.lr.to_string(),
            self.batch.to_string(),
            self.epochs.to_string(),
            self.weight_decay.to_string(),
            self.t_max.to_string(),
            self.eta_min.to_string(),
            self.seed.to_string(),
            self.tau.to_string(),
            self.dim.to_string(),
            self.grad_clip.to_string(),
            self.pairs_per_image.to_string(),
            self.crop.to_string(),
            self.n_crops.to_string(),
            self.momentum.to_string(),
            self.palette.clone(),
            self.ablation.to_string(),
            w.w_mse_score.to_string(),
            w.w_infonce.to_string(),
            w.w_restoration.to_string(),
            w.lambda_perceptual.to_string(),
            w.w_rs.to_string(),
            match self.pixel_reduction {
                PixelReduction::Mean => "mean".into(),
                PixelReduction::Sum => "sum".into(),
            },
            self.contrastive_sources.to_string(),
            self.predictor_width.to_string(),
            self.heads.to_string(),
            self.depth.to_string(),
            match self.attention_mode {
                AttentionMode::Spatial => "spatial".into(),
                AttentionMode::Channel => "channel".into(),
            },
            self.positional_encoding.to_string(),
            self.queue_depth.to_string(),
            match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    TrainConfig::parse_str(&text)
}
