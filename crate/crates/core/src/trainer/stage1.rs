//! Stage 1: contrastive pretraining of the encoder on synthetic pairs.

use std::sync::mpsc::sync_channel;

use candle_core::Device;
use rand::Rng;

use crate::buffer::ImageBuffer;
use crate::degrade::{make_contrastive_pair, Palette};
use crate::dre::{build_contrastive_batch, dual_contrastive_loss_with_keys, ContrastiveBatch, PatchRef};
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, images_to_tensor, scalar, Adam, ParamStore};
use crate::rng::{self, domain};
use crate::trainer::checkpoint::{Checkpoint, CheckpointMeta};
use crate::trainer::config::TrainConfig;
use crate::trainer::model::{Model, DRE_PREFIX};
use crate::trainer::LossRow;

/// Patches and their anchor/positive/negative bookkeeping for one step.
#[derive(Clone, Debug)]
pub struct ContrastiveStep {
    pub patches: Vec<ImageBuffer>,
    pub batch: ContrastiveBatch,
}

/// Two crops from each of two degraded views of every source, ordered
/// `x11, x12, x21, x22` per source. Deterministic in `(seed, key)`.
pub fn contrastive_step(
    sources: &[&ImageBuffer],
    palette: &Palette,
    crop: usize,
    seed: u64,
    key: &[u64],
) -> Result<ContrastiveStep> {
    let mut patches = Vec::with_capacity(4 * sources.len());
    let mut refs = Vec::with_capacity(4 * sources.len());
    for (j, img) in sources.iter().enumerate() {
        if img.height() < crop || img.width() < crop {
            return Err(Error::ImageTooSmall {
                height: img.height(),
                width: img.width(),
                min_height: crop,
                min_width: crop,
            });
        }
        let mut k: Vec<u64> = key.to_vec();
        k.push(j as u64);
        let pair = make_contrastive_pair(img, palette, rng::derive_seed(seed, &k))?;
        let mut r = rng::keyed(seed, &[&[domain::CROP], k.as_slice()].concat());
        for view in [&pair.x1, &pair.x1, &pair.x2, &pair.x2] {
            let y = r.random_range(0..=img.height() - crop);
            let x = r.random_range(0..=img.width() - crop);
            patches.push(view.crop(y, x, crop, crop)?);
        }
        refs.extend(PatchRef::quad(j, pair.recipe1.fingerprint(), pair.recipe2.fingerprint()));
    }
    Ok(ContrastiveStep {
        batch: build_contrastive_batch(&refs)?,
        patches,
    })
}

/// `batch` distinct corpus indices for one global step.
fn step_sources(corpus_len: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..corpus_len).collect();
    let mut r = rng::keyed(seed, &[domain::SHUFFLE, 1, step as u64]);
    let take = batch.min(corpus_len);
    for i in 0..take {
        let j = r.random_range(i..corpus_len);
        idx.swap(i, j);
    }
    idx.truncate(take);
    idx
}

pub fn steps_per_epoch(corpus_len: usize, cfg: &TrainConfig) -> usize {
    (corpus_len * cfg.pairs_per_image / cfg.batch.min(corpus_len)).max(1)
}

#[derive(Debug)]
pub struct Stage1Output {
    pub model: Model,
    pub checkpoint: Checkpoint,
    /// One `total` row per step.
    pub losses: Vec<LossRow>,
    /// `degradation` and `quality` rows per step.
    pub components: Vec<LossRow>,
}

impl Stage1Output {
    /// Mean total loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        crate::trainer::epoch_means(&self.losses, "total")
    }
}

/// Pretrains the encoder with the dual contrastive objective. Pair
/// synthesis runs on a producer thread feeding a bounded queue.
pub fn pretrain_stage1(
    corpus: &[ImageBuffer],
    palette: &Palette,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
    device: &Device,
) -> Result<Stage1Output> {
    cfg.validate()?;
    if cfg.stage != 1 {
        return Err(Error::config("stage", "pretraining needs stage: 1"));
    }
    if corpus.len() < 2 {
        return Err(Error::invalid(format!(
            "stage 1 needs at least 2 clean images for cross-content negatives, got {}",
            corpus.len()
        )));
    }
    if cfg.batch > corpus.len() {
        log::warn!("batch {} exceeds corpus size {}; using {}", cfg.batch, corpus.len(), corpus.len());
    }
    let model = Model::new(cfg, device)?;
    let mut adam = Adam::new(model.store.vars(DRE_PREFIX), cfg.lr, cfg.weight_decay);
    let mut start_epoch = 0;
    let mut step = 0;
    if let Some(ck) = resume {
        ck.check_dim(cfg.dim)?;
        if ck.meta.stage != 1 {
            return Err(Error::Checkpoint("resuming stage 1 needs a stage-1 checkpoint".into()));
        }
        model.store.load(&ck.section(DRE_PREFIX))?;
        adam.load_state(&ck.section("adam."), ck.meta.step);
        start_epoch = ck.meta.epoch;
        step = ck.meta.step;
        log::info!("resuming stage 1 at epoch {start_epoch}, seed {}", ck.meta.seed);
    }
    let momentum = (cfg.momentum > 0.0).then(|| cfg.momentum);
    let key_encoder = match momentum {
        Some(_) => Some(model.frozen_dre()?),
        None => None,
    };

    let spe = steps_per_epoch(corpus.len(), cfg);
    let total_steps = spe * cfg.epochs;
    let mut losses = Vec::new();
    let mut components = Vec::new();
    let (tx, rx) = sync_channel::<Result<ContrastiveStep>>(cfg.queue_depth);
    let first_step = step;
    std::thread::scope(|scope| -> Result<()> {
        // Owned here so an early error drops the receiver and unblocks the
        // producer before the scope joins it.
        let rx = rx;
        scope.spawn(move || {
            for g in first_step..total_steps {
                let idx = step_sources(corpus.len(), cfg.batch, cfg.seed, g);
                let sources: Vec<&ImageBuffer> = idx.iter().map(|&i| &corpus[i]).collect();
                let item = contrastive_step(&sources, palette, cfg.crop, cfg.seed, &[domain::PAIR, 1, g as u64]);
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });
        for epoch in start_epoch..cfg.epochs {
            adam.lr = cosine_lr(cfg.lr, cfg.eta_min, cfg.t_max, epoch);
            for _ in 0..spe {
                let data = rx
                    .recv()
                    .map_err(|_| Error::invalid("pair producer stopped early"))??;
                let refs: Vec<&ImageBuffer> = data.patches.iter().collect();
                let x = images_to_tensor(&refs, model.dtype, device)?;
                let reps = model.dre.forward(&x)?.rep;
                let keys = match &key_encoder {
                    Some((_, k)) => k.forward(&x)?.rep.detach(),
                    None => reps.clone(),
                };
                let loss = dual_contrastive_loss_with_keys(&data.batch, &reps, &keys, cfg.tau)?;
                let grads = loss.total.backward()?;
                adam.step(&grads, cfg.grad_clip())?;
                if let (Some(m), Some((kstore, _))) = (momentum, &key_encoder) {
                    ema_update(kstore, &model.store, m)?;
                }
                let total = scalar(&loss.total)?;
                if !total.is_finite() {
                    return Err(Error::Degenerate(format!("stage-1 loss became non-finite at step {step}")));
                }
                losses.push(LossRow::new(step, epoch, "total", total));
                components.push(LossRow::new(step, epoch, "degradation", scalar(&loss.degradation)?));
                components.push(LossRow::new(step, epoch, "quality", scalar(&loss.quality)?));
                step += 1;
            }
            log::info!(
                "stage 1 epoch {}/{}: mean loss {:.5}",
                epoch + 1,
                cfg.epochs,
                crate::trainer::epoch_means(&losses, "total").last().copied().unwrap_or(f64::NAN)
            );
        }
        Ok(())
    })?;

    let mut tensors = model.store.tensors(DRE_PREFIX);
    tensors.extend(adam.state_tensors());
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            stage: 1,
            config: cfg.clone(),
            palette_hash: palette.hash(),
            dim: cfg.dim,
            tau: cfg.tau,
            epoch: cfg.epochs,
            step,
            seed: cfg.seed,
        },
        tensors,
    };
    Ok(Stage1Output {
        model,
        checkpoint,
        losses,
        components,
    })
}

/// `key <- m * key + (1 - m) * query` over matching encoder parameters.
fn ema_update(key: &ParamStore, query: &ParamStore, m: f64) -> Result<()> {
    let q = query.tensors(DRE_PREFIX);
    for (name, var) in key.vars(crate::trainer::model::FROZEN_PREFIX) {
        let qname = format!("{DRE_PREFIX}{}", &name[crate::trainer::model::FROZEN_PREFIX.len()..]);
        if let Some(qt) = q.get(&qname) {
            let updated = ((var.as_tensor() * m)? + (qt * (1.0 - m))?)?;
            var.set(&updated)?;
        }
    }
    Ok(())
}
