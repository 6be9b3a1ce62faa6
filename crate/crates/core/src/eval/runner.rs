//! Protocol runners backed by trained models.

use candle_core::{DType, Device};

use crate::degrade::Palette;
use crate::error::Result;
use crate::eval::metrics::EvaluationRecord;
use crate::eval::protocol::{run_protocol_with, ProtocolReport, ProtocolSpec};
use crate::predictor::{predict_mos, QualityModel};
use crate::rng::{self, domain};
use crate::trainer::{train_stage2, Checkpoint, Sample, Stage2Output, TrainConfig};

/// Scores `rows` of `samples` with `predict_mos`, each row on its own crop
/// seed derived from `seed`.
pub fn score_rows(
    model: &QualityModel,
    samples: &[Sample],
    rows: &[usize],
    crop: usize,
    n_crops: usize,
    seed: u64,
    dtype: DType,
    dev: &Device,
) -> Result<Vec<EvaluationRecord>> {
    rows.iter()
        .map(|&i| {
            let s = &samples[i];
            let p = predict_mos(
                model,
                &s.image,
                crop,
                n_crops,
                rng::derive_seed(seed, &[domain::CROP, i as u64]),
                dtype,
                dev,
            )?;
            Ok(EvaluationRecord::new(s.id.clone(), s.mos, p.score))
        })
        .collect()
}

/// Evaluates one fixed model on the test rows of every (split, seed). The
/// training rows are unused; seeds only vary the crop positions.
pub fn run_protocol(
    samples: &[Sample],
    model: &QualityModel,
    spec: &ProtocolSpec,
    crop: usize,
    n_crops: usize,
    dtype: DType,
    dev: &Device,
) -> Result<ProtocolReport> {
    run_protocol_with(samples.len(), spec, |ctx| {
        score_rows(model, samples, &ctx.partition.test, crop, n_crops, ctx.seed, dtype, dev)
    })
}

/// Stage-2 training on `train` rows with `cfg` followed by scoring of the
/// `test` rows.
pub fn train_and_score(
    samples: &[Sample],
    train: &[usize],
    test: &[usize],
    stage1: &Checkpoint,
    palette: &Palette,
    cfg: &TrainConfig,
    device: &Device,
) -> Result<(Stage2Output, Vec<EvaluationRecord>)> {
    let train_rows: Vec<Sample> = train.iter().map(|&i| samples[i].clone()).collect();
    let out = train_stage2(&train_rows, stage1, palette, cfg, None, device)?;
    let qm = out.model.quality_model()?;
    let records = score_rows(&qm, samples, test, cfg.crop, cfg.n_crops, cfg.seed, out.model.dtype, device)?;
    Ok((out, records))
}

/// Retrains stage 2 from `stage1` for every (split, seed), with the run
/// seed replacing `cfg.seed`, and evaluates on the held-out rows.
pub fn run_protocol_retrain(
    samples: &[Sample],
    stage1: &Checkpoint,
    palette: &Palette,
    cfg: &TrainConfig,
    spec: &ProtocolSpec,
    device: &Device,
) -> Result<ProtocolReport> {
    run_protocol_with(samples.len(), spec, |ctx| {
        let run_cfg = TrainConfig {
            seed: ctx.seed,
            ..cfg.clone()
        };
        let (_, records) = train_and_score(
            samples,
            &ctx.partition.train,
            &ctx.partition.test,
            stage1,
            palette,
            &run_cfg,
            device,
        )?;
        Ok(records)
    })
}
