//! Stage 2: joint training of encoder, restorer and predictor on scored
//! images, with the ablation ladder selecting the active terms.

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::buffer::ImageBuffer;
use crate::degrade::Palette;
use crate::dre::{dual_contrastive_loss, DualRepresentationExtractor};
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, images_to_tensor, scalar, tensor_to_images, Adam, ParamStore};
use crate::ram::{restoration_loss, rs_loss, GuidanceMode, PerceptualProxy};
use crate::rng::{self, domain};
use crate::trainer::checkpoint::{Checkpoint, CheckpointMeta};
use crate::trainer::config::TrainConfig;
use crate::trainer::dataset::Sample;
use crate::trainer::model::{Model, DRE_PREFIX, FROZEN_PREFIX, PRED_PREFIX, RAM_PREFIX};
use crate::trainer::stage1::contrastive_step;
use crate::trainer::LossRow;

pub const TERMS: [&str; 5] = ["mse", "infonce", "restoration", "rs", "total"];

/// Loss values of one step, in [`TERMS`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub mse: f64,
    pub infonce: f64,
    pub restoration: f64,
    pub rs: f64,
    pub total: f64,
}

impl StepLosses {
    pub fn values(&self) -> [f64; 5] {
        [self.mse, self.infonce, self.restoration, self.rs, self.total]
    }
}

#[derive(Debug)]
pub struct Stage2Output {
    pub model: Model,
    pub frozen_store: ParamStore,
    pub frozen: DualRepresentationExtractor,
    pub checkpoint: Checkpoint,
    pub losses: Vec<LossRow>,
}

/// State of a stage-2 run; exposes single steps for inspection.
pub struct Stage2Trainer<'a> {
    pub model: Model,
    pub frozen_store: ParamStore,
    pub frozen: DualRepresentationExtractor,
    perceptual: PerceptualProxy,
    adam: Adam,
    cfg: TrainConfig,
    samples: &'a [Sample],
    palette: &'a Palette,
    contrastive: bool,
    pub step: usize,
    pub epoch: usize,
}

impl<'a> Stage2Trainer<'a> {
    /// Builds the full network, loads the stage-1 encoder into both the
    /// trained path and the frozen snapshot.
    pub fn new(
        samples: &'a [Sample],
        stage1: &Checkpoint,
        palette: &'a Palette,
        cfg: &TrainConfig,
        device: &Device,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage != 2 {
            return Err(Error::config("stage", "joint training needs stage: 2"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("stage 2 needs at least one scored image"));
        }
        stage1.check_dim(cfg.dim)?;
        let have_refs = samples.iter().all(|s| s.reference.is_some());
        if cfg.ablation.uses_restoration() && !have_refs {
            return Err(Error::config(
                "ablation",
                format!("{} needs a clean reference for every row", cfg.ablation),
            ));
        }
        for s in samples {
            if s.image.height() < cfg.crop || s.image.width() < cfg.crop {
                return Err(Error::ImageTooSmall {
                    height: s.image.height(),
                    width: s.image.width(),
                    min_height: cfg.crop,
                    min_width: cfg.crop,
                });
            }
        }
        let contrastive = cfg.ablation.uses_contrastive() && samples.iter().any(|s| s.reference.is_some());
        if cfg.ablation.uses_contrastive() && !contrastive {
            log::warn!("no clean references available; the stage-2 contrastive term is disabled");
        }
        let model = Model::new(cfg, device)?;
        model.store.load(&stage1.section(DRE_PREFIX))?;
        let (frozen_store, frozen) = model.frozen_dre()?;
        let params = [DRE_PREFIX, RAM_PREFIX, PRED_PREFIX]
            .iter()
            .flat_map(|p| model.store.vars(p))
            .collect();
        Ok(Self {
            perceptual: PerceptualProxy::new(model.dtype, device)?,
            adam: Adam::new(params, cfg.lr, cfg.weight_decay),
            model,
            frozen_store,
            frozen,
            cfg: cfg.clone(),
            samples,
            palette,
            contrastive,
            step: 0,
            epoch: 0,
        })
    }

    /// Restores parameters, optimizer state and counters from a stage-2
    /// checkpoint.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.meta.stage != 2 {
            return Err(Error::Checkpoint("resuming stage 2 needs a stage-2 checkpoint".into()));
        }
        ck.check_dim(self.cfg.dim)?;
        for p in [DRE_PREFIX, RAM_PREFIX, PRED_PREFIX, FROZEN_PREFIX] {
            let section = ck.section(p);
            if p == FROZEN_PREFIX {
                self.frozen_store.load(&section)?;
            } else {
                self.model.store.load(&section)?;
            }
        }
        self.adam.load_state(&ck.section("adam."), ck.meta.step);
        self.step = ck.meta.step;
        self.epoch = ck.meta.epoch;
        log::info!("resuming stage 2 at epoch {}, seed {}", self.epoch, ck.meta.seed);
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.cfg.batch)
    }

    /// Row indices and crop corners of batch `b` in `epoch`.
    fn batch_plan(&self, epoch: usize, b: usize) -> Vec<(usize, usize, usize)> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng::keyed(self.cfg.seed, &[domain::SHUFFLE, 2, epoch as u64]));
        let lo = b * self.cfg.batch;
        let hi = (lo + self.cfg.batch).min(order.len());
        order[lo..hi]
            .iter()
            .map(|&i| {
                let img = &self.samples[i].image;
                let mut r = rng::keyed(self.cfg.seed, &[domain::CROP, 2, epoch as u64, i as u64]);
                let y = r.random_range(0..=img.height() - self.cfg.crop);
                let x = r.random_range(0..=img.width() - self.cfg.crop);
                (i, y, x)
            })
            .collect()
    }

    /// Computes every active term on batch `b` of `epoch` without updating
    /// parameters. Returns the total as a tensor plus scalar values.
    pub fn losses(&self, epoch: usize, b: usize) -> Result<(Tensor, StepLosses)> {
        let cfg = &self.cfg;
        let w = &cfg.loss_weights;
        let (dtype, dev) = (self.model.dtype, &self.model.device);
        let plan = self.batch_plan(epoch, b);
        let c = cfg.crop;
        let crops = plan
            .iter()
            .map(|&(i, y, x)| self.samples[i].image.crop(y, x, c, c))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ImageBuffer> = crops.iter().collect();
        let x = images_to_tensor(&refs, dtype, dev)?;
        let mos: Vec<f64> = plan.iter().map(|&(i, _, _)| self.samples[i].mos).collect();
        let target = Tensor::from_vec(mos, plan.len(), dev)?.to_dtype(dtype)?;

        let enc = self.model.dre.forward(&x)?;
        let score = self.model.predictor.forward(&x, &enc.lower_map()?)?;
        let mse = (score - target)?.sqr()?.mean_all()?;
        let mut total = (&mse * w.w_mse_score)?;
        let mut values = StepLosses {
            mse: scalar(&mse)?,
            infonce: 0.0,
            restoration: 0.0,
            rs: 0.0,
            total: 0.0,
        };

        if self.contrastive {
            if let Some(l) = self.contrastive_term(&plan, epoch, b)? {
                values.infonce = scalar(&l)?;
                total = (total + (l * w.w_infonce)?)?;
            }
        }

        if cfg.ablation.uses_restoration() {
            let ref_crops = plan
                .iter()
                .map(|&(i, y, x)| self.samples[i].reference.as_ref().expect("checked in new").crop(y, x, c, c))
                .collect::<Result<Vec<_>>>()?;
            let rr: Vec<&ImageBuffer> = ref_crops.iter().collect();
            let reference = images_to_tensor(&rr, dtype, dev)?;
            let (restored, _) = self
                .model
                .restorer
                .forward(&x, &enc.upper()?, &enc.reserved, GuidanceMode::Full)?;
            let rl = restoration_loss(&restored, &reference, w.lambda_perceptual, &self.perceptual, cfg.pixel_reduction)?;
            values.restoration = scalar(&rl.total)?;
            total = (total + (rl.total * w.w_restoration)?)?;
            if cfg.ablation.uses_rs() {
                let rs = rs_loss(&restored, &reference, &self.frozen)?;
                values.rs = scalar(&rs)?;
                total = (total + (rs * w.w_rs)?)?;
            }
        }
        values.total = scalar(&total)?;
        Ok((total, values))
    }

    /// Dual contrastive loss on pairs regenerated from up to
    /// `contrastive_sources` distinct references of the batch.
    fn contrastive_term(&self, plan: &[(usize, usize, usize)], epoch: usize, b: usize) -> Result<Option<Tensor>> {
        let mut seen = Vec::new();
        let mut sources: Vec<&ImageBuffer> = Vec::new();
        for &(i, _, _) in plan {
            let s = &self.samples[i];
            if let Some(r) = &s.reference {
                if !seen.contains(&s.content_id) && sources.len() < self.cfg.contrastive_sources {
                    seen.push(s.content_id);
                    sources.push(r);
                }
            }
        }
        if sources.len() < 2 {
            return Ok(None);
        }
        let step = contrastive_step(
            &sources,
            self.palette,
            self.cfg.crop,
            self.cfg.seed,
            &[domain::PAIR, 2, epoch as u64, b as u64],
        )?;
        let refs: Vec<&ImageBuffer> = step.patches.iter().collect();
        let reps = self
            .model
            .dre
            .forward(&images_to_tensor(&refs, self.model.dtype, &self.model.device)?)?
            .rep;
        Ok(Some(dual_contrastive_loss(&step.batch, &reps, self.cfg.tau)?.total))
    }

    /// One optimizer step on the next batch.
    pub fn train_step(&mut self, b: usize) -> Result<StepLosses> {
        let (total, values) = self.losses(self.epoch, b)?;
        if !values.total.is_finite() {
            return Err(Error::Degenerate(format!("stage-2 loss became non-finite at step {}", self.step)));
        }
        let grads = total.backward()?;
        self.adam.step(&grads, self.cfg.grad_clip())?;
        self.step += 1;
        Ok(values)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<Vec<LossRow>> {
        let mut rows = Vec::new();
        let spe = self.steps_per_epoch();
        while self.epoch < self.cfg.epochs {
            self.adam.lr = cosine_lr(self.cfg.lr, self.cfg.eta_min, self.cfg.t_max, self.epoch);
            for b in 0..spe {
                let step = self.step;
                let v = self.train_step(b)?;
                for (term, value) in TERMS.iter().zip(v.values()) {
                    rows.push(LossRow::new(step, self.epoch, term, value));
                }
            }
            log::info!(
                "stage 2 epoch {}/{}: mean loss {:.5}",
                self.epoch + 1,
                self.cfg.epochs,
                crate::trainer::epoch_means(&rows, "total").last().copied().unwrap_or(f64::NAN)
            );
            self.epoch += 1;
        }
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = std::collections::BTreeMap::new();
        for p in [DRE_PREFIX, RAM_PREFIX, PRED_PREFIX] {
            tensors.extend(self.model.store.tensors(p));
        }
        tensors.extend(self.frozen_store.tensors(FROZEN_PREFIX));
        tensors.extend(self.adam.state_tensors());
        Ok(Checkpoint {
            meta: CheckpointMeta {
                stage: 2,
                config: self.cfg.clone(),
                palette_hash: self.palette.hash(),
                dim: self.cfg.dim,
                tau: self.cfg.tau,
                epoch: self.epoch,
                step: self.step,
                seed: self.cfg.seed,
            },
            tensors,
        })
    }

    pub fn finish(self, losses: Vec<LossRow>) -> Result<Stage2Output> {
        let checkpoint = self.checkpoint()?;
        Ok(Stage2Output {
            model: self.model,
            frozen_store: self.frozen_store,
            frozen: self.frozen,
            checkpoint,
            losses,
        })
    }
}

/// Joint training from a stage-1 checkpoint.
pub fn train_stage2(
    samples: &[Sample],
    stage1: &Checkpoint,
    palette: &Palette,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
    device: &Device,
) -> Result<Stage2Output> {
    let mut t = Stage2Trainer::new(samples, stage1, palette, cfg, device)?;
    if let Some(ck) = resume {
        t.resume(ck)?;
    }
    let rows = t.run()?;
    t.finish(rows)
}

/// Center crops of side `crop` from `(image, reference)` pairs: mean
/// squared error of the restored crops and of the degraded crops, both
/// against the clean crops.
pub fn restoration_l2(model: &Model, samples: &[&Sample], crop: usize) -> Result<(f64, f64)> {
    let mut restored_err = 0.0;
    let mut degraded_err = 0.0;
    let mut n = 0usize;
    for chunk in samples.chunks(16) {
        let mut xs = Vec::with_capacity(chunk.len());
        let mut rs = Vec::with_capacity(chunk.len());
        for s in chunk {
            let reference = s
                .reference
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{} has no clean reference", s.id)))?;
            let top = (s.image.height() - crop) / 2;
            let left = (s.image.width() - crop) / 2;
            xs.push(s.image.crop(top, left, crop, crop)?);
            rs.push(reference.crop(top, left, crop, crop)?);
        }
        let xr: Vec<&ImageBuffer> = xs.iter().collect();
        let x = images_to_tensor(&xr, model.dtype, &model.device)?;
        let enc = model.dre.forward(&x)?;
        let (out, _) = model.restorer.forward(&x, &enc.upper()?, &enc.reserved, GuidanceMode::Full)?;
        for ((restored, degraded), clean) in tensor_to_images(&out)?.iter().zip(&xs).zip(&rs) {
            restored_err += restored.mse(clean)?;
            degraded_err += degraded.mse(clean)?;
            n += 1;
        }
    }
    Ok((restored_err / n as f64, degraded_err / n as f64))
}

/// Restored images of `samples` written as PNG with a JSON sidecar of the
/// per-image loss components.
pub fn dump_restorations(model: &Model, samples: &[&Sample], crop: usize, lambda: f64, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let perceptual = PerceptualProxy::new(DType::F64, &Device::Cpu)?;
    for (k, s) in samples.iter().enumerate() {
        let top = (s.image.height() - crop) / 2;
        let left = (s.image.width() - crop) / 2;
        let x_img = s.image.crop(top, left, crop, crop)?;
        let x = images_to_tensor(&[&x_img], model.dtype, &model.device)?;
        let enc = model.dre.forward(&x)?;
        let (out, _) = model.restorer.forward(&x, &enc.upper()?, &enc.reserved, GuidanceMode::Full)?;
        let restored = tensor_to_images(&out)?.remove(0);
        restored.save(dir.join(format!("restored_{k:04}.png")))?;
        let mut sidecar = serde_json::json!({ "id": s.id });
        if let Some(r) = &s.reference {
            let clean = r.crop(top, left, crop, crop)?;
            let rt = images_to_tensor(&[&restored], DType::F64, &Device::Cpu)?;
            let ct = images_to_tensor(&[&clean], DType::F64, &Device::Cpu)?;
            let l = restoration_loss(&rt, &ct, lambda, &perceptual, crate::ram::PixelReduction::Mean)?;
            sidecar = serde_json::json!({
                "id": s.id,
                "pixel": scalar(&l.pixel)?,
                "perceptual": scalar(&l.perceptual)?,
                "restoration": scalar(&l.total)?,
                "mse_degraded": x_img.mse(&clean)?,
            });
        }
        crate::trainer::checkpoint::write_atomic(
            &dir.join(format!("restored_{k:04}.json")),
            serde_json::to_string_pretty(&sidecar)?.as_bytes(),
        )?;
    }
    Ok(())
}
