//! Two-stage training: contrastive pretraining of the encoder, then joint
//! training of encoder, restorer and predictor.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod model;
pub mod stage1;
pub mod stage2;

pub use checkpoint::{write_atomic, Checkpoint, CheckpointMeta};
pub use config::{load_config, Ablation, Precision, TrainConfig};
pub use dataset::{load_samples, read_manifest, samples_from_toy, write_manifest, ManifestRow, Sample};
pub use model::Model;
pub use stage1::{pretrain_stage1, Stage1Output};
pub use stage2::{restoration_l2, train_stage2, Stage2Output, Stage2Trainer, StepLosses};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{self, domain};

/// One loss-curve entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub term: String,
    pub value: f64,
}

impl LossRow {
    pub fn new(step: usize, epoch: usize, term: &str, value: f64) -> Self {
        Self {
            step,
            epoch,
            term: term.to_string(),
            value,
        }
    }
}

/// Mean value of `term` per epoch, in epoch order.
pub fn epoch_means(rows: &[LossRow], term: &str) -> Vec<f64> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.term == term) {
        match out.last_mut() {
            Some((e, sum, n)) if *e == r.epoch => {
                *sum += r.value;
                *n += 1;
            }
            _ => out.push((r.epoch, r.value, 1)),
        }
    }
    out.into_iter().map(|(_, s, n)| s / n as f64).collect()
}

/// Writes `step,term,value` rows.
pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "term", "value"])?;
    for r in rows {
        w.write_record([r.step.to_string(), r.term.clone(), format!("{:e}", r.value)])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::error::Error::invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<(usize, String, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let step = rec[0].parse().map_err(|_| crate::error::Error::invalid("bad step in loss csv"))?;
        let value = rec[2].parse().map_err(|_| crate::error::Error::invalid("bad value in loss csv"))?;
        out.push((step, rec[1].to_string(), value));
    }
    Ok(out)
}

/// Seeds of the independent stochastic sources of a run. Every source is a
/// counter-based stream keyed from the one global seed, so nothing depends
/// on the order in which the sources are consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    pub global: u64,
    pub init: u64,
    pub recipes: u64,
    pub crops: u64,
    pub shuffle: u64,
}

pub fn set_global_seed(seed: u64) -> SeedStreams {
    SeedStreams {
        global: seed,
        init: rng::derive_seed(seed, &[domain::INIT]),
        recipes: rng::derive_seed(seed, &[domain::RECIPE_ORDER]),
        crops: rng::derive_seed(seed, &[domain::CROP]),
        shuffle: rng::derive_seed(seed, &[domain::SHUFFLE]),
    }
}
