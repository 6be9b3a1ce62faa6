//! Linear probes on frozen representation halves.

use candle_core::{DType, Device};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::degrade::{apply_recipe, DegradationKind, DegradationOp, DegradationRecipe};
use crate::dre::encoder::DualRepresentationExtractor;
use crate::error::{Error, Result};
use crate::nn::images_to_tensor;
use crate::rng::{self, domain};

#[derive(Clone, Debug)]
pub struct ProbeSample {
    pub image: ImageBuffer,
    pub label: usize,
    /// Source image; train and test never share a group.
    pub group: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub upper_accuracy: f64,
    pub lower_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
}

#[derive(Clone, Debug)]
pub struct ProbeSettings {
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-3,
            seed: 0,
        }
    }
}

/// One single-kind degradation of every clean image for every kind; the
/// label is the kind's position in `kinds`. Severities are drawn from
/// `[min_severity, 1]`; patches are center crops of side `crop`.
pub fn kind_probe_samples(
    kinds: &[DegradationKind],
    clean: &[ImageBuffer],
    crop: usize,
    min_severity: f32,
    seed: u64,
) -> Result<Vec<ProbeSample>> {
    let mut out = Vec::with_capacity(kinds.len() * clean.len());
    for (i, img) in clean.iter().enumerate() {
        if img.height() < crop || img.width() < crop {
            return Err(Error::ImageTooSmall {
                height: img.height(),
                width: img.width(),
                min_height: crop,
                min_width: crop,
            });
        }
        for (label, &kind) in kinds.iter().enumerate() {
            let mut r = rng::keyed(seed, &[domain::PROBE, i as u64, kind.index()]);
            let recipe = DegradationRecipe {
                seed: r.random(),
                steps: vec![DegradationOp {
                    kind,
                    severity: min_severity + (1.0 - min_severity) * r.random::<f32>(),
                    selection_probability: 1.0,
                    range: kind.default_range(),
                    boost: kind.is_bidirectional() && r.random::<bool>(),
                }],
            };
            let degraded = apply_recipe(img, &recipe)?;
            let top = (img.height() - crop) / 2;
            let left = (img.width() - crop) / 2;
            out.push(ProbeSample {
                image: degraded.crop(top, left, crop, crop)?,
                label,
                group: i,
            });
        }
    }
    Ok(out)
}

/// Multinomial logistic regression trained by full-batch gradient descent
/// on standardized features.
#[derive(Clone, Debug)]
pub struct SoftmaxClassifier {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl SoftmaxClassifier {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, settings: &ProbeSettings) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::invalid("no training samples"));
        }
        let d = x[0].len();
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut std = vec![0.0; d];
        for row in x {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }
        let xs: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
            .collect();

        let mut w = vec![vec![0.0; d]; n_classes];
        let mut b = vec![0.0; n_classes];
        let mut probs = vec![0.0; n_classes];
        for _ in 0..settings.iterations {
            let mut gw = vec![vec![0.0; d]; n_classes];
            let mut gb = vec![0.0; n_classes];
            for (row, &label) in xs.iter().zip(y) {
                for k in 0..n_classes {
                    probs[k] = b[k] + w[k].iter().zip(row).map(|(a, c)| a * c).sum::<f64>();
                }
                let m = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = probs.iter().map(|p| (p - m).exp()).sum();
                for k in 0..n_classes {
                    let p = (probs[k] - m).exp() / z - if k == label { 1.0 } else { 0.0 };
                    gb[k] += p / n as f64;
                    for (g, v) in gw[k].iter_mut().zip(row) {
                        *g += p * v / n as f64;
                    }
                }
            }
            for k in 0..n_classes {
                b[k] -= settings.learning_rate * gb[k];
                for (wj, gj) in w[k].iter_mut().zip(&gw[k]) {
                    *wj -= settings.learning_rate * (gj + settings.l2 * *wj);
                }
            }
        }
        Ok(Self {
            weights: w,
            bias: b,
            mean,
            std,
        })
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, (w, b)) in self.weights.iter().zip(&self.bias).enumerate() {
            let s = b + w
                .iter()
                .zip(row.iter().zip(&self.mean).zip(&self.std))
                .map(|(a, ((v, m), sd))| a * (v - m) / sd)
                .sum::<f64>();
            if s > best.1 {
                best = (k, s);
            }
        }
        best.0
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len().max(1) as f64
    }
}

/// Pooled representations of `images`, split into (upper, lower) halves.
pub fn encode_halves(
    encoder: &DualRepresentationExtractor,
    images: &[&ImageBuffer],
    dtype: DType,
    dev: &Device,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut upper = Vec::with_capacity(images.len());
    let mut lower = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        let out = encoder.forward(&images_to_tensor(chunk, dtype, dev)?)?;
        let rep = out.rep.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        for r in rep {
            let (u, l) = r.split_at(r.len() / 2);
            upper.push(u.to_vec());
            lower.push(l.to_vec());
        }
    }
    Ok((upper, lower))
}

/// Trains one classifier on each half of the frozen encoder's
/// representation and reports held-out accuracies.
pub fn linear_probe(
    encoder: &DualRepresentationExtractor,
    samples: &[ProbeSample],
    settings: &ProbeSettings,
    dtype: DType,
    dev: &Device,
) -> Result<ProbeResult> {
    let n_classes = samples.iter().map(|s| s.label).max().map_or(0, |m| m + 1);
    let mut seen = vec![false; n_classes];
    for s in samples {
        seen[s.label] = true;
    }
    if seen.iter().filter(|&&v| v).count() < 2 {
        return Err(Error::Degenerate("a linear probe needs at least two classes".into()));
    }

    let mut groups: Vec<usize> = samples.iter().map(|s| s.group).collect();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        return Err(Error::Degenerate("a linear probe needs at least two groups".into()));
    }
    groups.shuffle(&mut rng::keyed(settings.seed, &[domain::PROBE, 0xffff]));
    let n_train = ((groups.len() as f64 * settings.train_fraction).round() as usize).clamp(1, groups.len() - 1);
    let train_groups = &groups[..n_train];
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| train_groups.contains(&samples[i].group));
    let (train_idx, test_idx) = (train_idx.as_slice(), test_idx.as_slice());

    let images: Vec<&ImageBuffer> = samples.iter().map(|s| &s.image).collect();
    let (upper, lower) = encode_halves(encoder, &images, dtype, dev)?;
    let pick = |feats: &[Vec<f64>], idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (
            idx.iter().map(|&i| feats[i].clone()).collect(),
            idx.iter().map(|&i| samples[i].label).collect(),
        )
    };
    let mut acc = [0.0; 2];
    for (slot, feats) in [&upper, &lower].into_iter().enumerate() {
        let (xtr, ytr) = pick(feats, train_idx);
        let (xte, yte) = pick(feats, test_idx);
        let clf = SoftmaxClassifier::fit(&xtr, &ytr, n_classes, settings)?;
        acc[slot] = clf.accuracy(&xte, &yte);
    }
    Ok(ProbeResult {
        upper_accuracy: acc[0],
        lower_accuracy: acc[1],
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_separates_separable_data() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 % 2.0 * 3.0 + 0.01 * i as f64, 1.0]).collect();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let clf = SoftmaxClassifier::fit(&x, &y, 2, &ProbeSettings::default()).unwrap();
        assert_eq!(clf.accuracy(&x, &y), 1.0);
    }
}
