use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};

use crate::dre::{DreConfig, DualRepresentationExtractor};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::predictor::{Predictor, PredictorConfig, QualityModel};
use crate::ram::{Restorer, RestorerConfig};
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::config::TrainConfig;

pub const DRE_PREFIX: &str = "dre.";
pub const RAM_PREFIX: &str = "ram.";
pub const PRED_PREFIX: &str = "pred.";
pub const FROZEN_PREFIX: &str = "frozen_dre.";

pub fn dre_config(cfg: &TrainConfig) -> DreConfig {
    DreConfig {
        dim: cfg.dim,
        min_input: DreConfig::default().min_input.min(cfg.crop),
        ..DreConfig::default()
    }
}

pub fn predictor_config(cfg: &TrainConfig) -> PredictorConfig {
    PredictorConfig {
        width: cfg.predictor_width,
        heads: cfg.heads,
        depth: cfg.depth,
        attention_mode: cfg.attention_mode,
        positional_encoding: cfg.positional_encoding,
        crop: cfg.crop,
        n_crops: cfg.n_crops,
        ..PredictorConfig::for_encoder(&dre_config(cfg))
    }
}

/// Encoder, restorer and predictor sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub dre: DualRepresentationExtractor,
    pub restorer: Restorer,
    pub predictor: Predictor,
    pub dtype: DType,
    pub device: Device,
}

impl Model {
    pub fn new(cfg: &TrainConfig, device: &Device) -> Result<Self> {
        let store = ParamStore::new(cfg.seed);
        let dtype = cfg.precision.dtype();
        let vb = store.builder(dtype, device);
        let dcfg = dre_config(cfg);
        let dre = DualRepresentationExtractor::new(&dcfg, vb.pp("dre"))?;
        let restorer = Restorer::new(
            &RestorerConfig::for_encoder(dcfg.stage_channels(), dcfg.half()),
            vb.pp("ram"),
        )?;
        let predictor = Predictor::new(&predictor_config(cfg), vb.pp("pred"))?;
        Ok(Self {
            store,
            dre,
            restorer,
            predictor,
            dtype,
            device: device.clone(),
        })
    }

    /// Rebuilds a model from a checkpoint's config and weights.
    pub fn from_checkpoint(ckpt: &Checkpoint, device: &Device) -> Result<Self> {
        let model = Self::new(&ckpt.meta.config, device)?;
        ckpt.check_dim(model.dre.config().dim)?;
        model.store.load(&model.weights_of(ckpt))?;
        Ok(model)
    }

    fn weights_of(&self, ckpt: &Checkpoint) -> BTreeMap<String, Tensor> {
        [DRE_PREFIX, RAM_PREFIX, PRED_PREFIX]
            .iter()
            .flat_map(|p| ckpt.section(p))
            .collect()
    }

    pub fn quality_model(&self) -> Result<QualityModel> {
        QualityModel::new(self.dre.clone(), self.predictor.clone())
    }

    /// An independent copy of the current encoder weights on its own store,
    /// named under `frozen_dre.`; no optimizer sees these variables.
    pub fn frozen_dre(&self) -> Result<(ParamStore, DualRepresentationExtractor)> {
        let store = ParamStore::new(self.store.seed());
        let renamed: BTreeMap<String, Tensor> = self
            .store
            .tensors(DRE_PREFIX)
            .into_iter()
            .map(|(k, v)| Ok((format!("{FROZEN_PREFIX}{}", &k[DRE_PREFIX.len()..]), v.copy()?)))
            .collect::<Result<_>>()?;
        store.load(&renamed)?;
        let dre = DualRepresentationExtractor::new(
            self.dre.config(),
            store.builder(self.dtype, &self.device).pp("frozen_dre"),
        )?;
        Ok((store, dre))
    }
}
