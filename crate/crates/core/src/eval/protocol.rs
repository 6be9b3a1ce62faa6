use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{plcc, srocc, EvaluationRecord};
use crate::rng::{self, domain};

pub const MIN_PROTOCOL_ROWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub splits: usize,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    /// Keys the shuffled partitions; shared by all seeds so that seeds vary
    /// only the model side of each split.
    pub partition_seed: u64,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            splits: 10,
            seeds: (0..5).collect(),
            train_fraction: 0.8,
            partition_seed: 0,
        }
    }
}

/// Disjoint, exhaustive train/test row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn partition(n_rows: usize, train_fraction: f64, partition_seed: u64, split: usize) -> Result<Partition> {
    if n_rows < MIN_PROTOCOL_ROWS {
        return Err(Error::invalid(format!(
            "the protocol needs at least {MIN_PROTOCOL_ROWS} rows, got {n_rows}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut rng::keyed(partition_seed, &[domain::SPLIT, split as u64]));
    let n_train = ((n_rows as f64 * train_fraction).round() as usize).clamp(1, n_rows - 2);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Partition { train, test })
}

/// Everything an evaluator needs for one (split, seed) run.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub split: usize,
    pub seed: u64,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub split: usize,
    pub seed: u64,
    pub srocc: f64,
    pub plcc: f64,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub runs: Vec<RunResult>,
    pub mean_srocc: f64,
    pub mean_plcc: f64,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub splits: usize,
    pub seeds: Vec<u64>,
}

impl ProtocolReport {
    pub fn from_runs(runs: Vec<RunResult>, spec: &ProtocolSpec) -> Self {
        let n = runs.len().max(1) as f64;
        Self {
            mean_srocc: runs.iter().map(|r| r.srocc).sum::<f64>() / n,
            mean_plcc: runs.iter().map(|r| r.plcc).sum::<f64>() / n,
            runs,
            train_fraction: spec.train_fraction,
            test_fraction: 1.0 - spec.train_fraction,
            splits: spec.splits,
            seeds: spec.seeds.clone(),
        }
    }
}

/// Runs `evaluate` for every (split, seed) and aggregates SROCC/PLCC by plain
/// means. A PLCC that is undefined for a run (constant predictions) counts
/// as 0.
pub fn run_protocol_with<F>(n_rows: usize, spec: &ProtocolSpec, mut evaluate: F) -> Result<ProtocolReport>
where
    F: FnMut(&RunContext) -> Result<Vec<EvaluationRecord>>,
{
    if spec.splits == 0 || spec.seeds.is_empty() {
        return Err(Error::invalid("the protocol needs at least one split and one seed"));
    }
    let mut runs = Vec::with_capacity(spec.splits * spec.seeds.len());
    for split in 0..spec.splits {
        let partition = partition(n_rows, spec.train_fraction, spec.partition_seed, split)?;
        for &seed in &spec.seeds {
            let ctx = RunContext {
                split,
                seed,
                partition: partition.clone(),
            };
            let records = evaluate(&ctx)?;
            let s = srocc(&records)?.value;
            let p = match plcc(&records) {
                Ok(v) => v,
                Err(Error::Degenerate(msg)) => {
                    log::warn!("split {split} seed {seed}: PLCC undefined ({msg}); counting 0");
                    0.0
                }
                Err(e) => return Err(e),
            };
            log::info!("split {split} seed {seed}: SROCC {s:.4} PLCC {p:.4}");
            runs.push(RunResult {
                split,
                seed,
                srocc: s,
                plcc: p,
                n_test: records.len(),
            });
        }
    }
    Ok(ProtocolReport::from_runs(runs, spec))
}
