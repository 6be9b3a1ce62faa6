//! Positive/negative selection for the two representation halves and the
//! reference (slice-based) InfoNCE.
//!
//! Every source image contributes four patches: two crops of its first
//! degraded view (`x11`, `x12`) and two of its second view (`x21`, `x22`).
//! For each source the anchor is `x11` and the positive is `x12`.
//!
//! * degradation half: negatives are the patches of every other source whose
//!   recipe differs from the anchor's (different content and different
//!   degradation);
//! * quality half: the same negatives plus `x21` and `x22`, i.e. same content
//!   under a different recipe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which degraded view of the source image a patch was cropped from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    First,
    Second,
}

/// Provenance of one encoded patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub source: usize,
    pub view: View,
    pub crop: usize,
    pub recipe_id: u64,
}

impl PatchRef {
    /// The four patches of one source in canonical order `x11, x12, x21, x22`.
    pub fn quad(source: usize, recipe1: u64, recipe2: u64) -> [PatchRef; 4] {
        [
            PatchRef { source, view: View::First, crop: 0, recipe_id: recipe1 },
            PatchRef { source, view: View::First, crop: 1, recipe_id: recipe1 },
            PatchRef { source, view: View::Second, crop: 0, recipe_id: recipe2 },
            PatchRef { source, view: View::Second, crop: 1, recipe_id: recipe2 },
        ]
    }
}

/// Indices into the batch's patch list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub patches: Vec<PatchRef>,
    pub degradation: Vec<Triplet>,
    pub quality: Vec<Triplet>,
}

impl ContrastiveBatch {
    pub fn num_sources(&self) -> usize {
        self.degradation.len().max(self.quality.len())
    }
}

/// Splits a representation into its degradation (upper) and quality
/// (lower) halves.
pub fn split_representation<T: Copy>(rep: &[T]) -> Result<(&[T], &[T])> {
    if rep.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "representation dimension {} is odd and cannot be halved",
            rep.len()
        )));
    }
    Ok(rep.split_at(rep.len() / 2))
}

fn find(patches: &[PatchRef], source: usize, view: View, crop: usize) -> Result<usize> {
    let mut hits = patches
        .iter()
        .enumerate()
        .filter(|(_, p)| p.source == source && p.view == view && p.crop == crop);
    let (i, _) = hits.next().ok_or_else(|| {
        Error::invalid(format!("source {source} is missing crop {crop} of view {view:?}"))
    })?;
    if hits.next().is_some() {
        return Err(Error::invalid(format!(
            "source {source} has duplicate crop {crop} of view {view:?}"
        )));
    }
    Ok(i)
}

/// Builds anchor/positive/negative index sets for both halves.
pub fn build_contrastive_batch(patches: &[PatchRef]) -> Result<ContrastiveBatch> {
    let mut sources: Vec<usize> = patches.iter().map(|p| p.source).collect();
    sources.sort_unstable();
    sources.dedup();
    if sources.len() < 2 {
        return Err(Error::invalid(
            "a contrastive batch needs at least 2 source images for cross-content negatives",
        ));
    }
    for &s in &sources {
        if patches.iter().filter(|p| p.source == s).count() != 4 {
            return Err(Error::invalid(format!(
                "source {s} must contribute exactly 4 patches (2 crops of each view)"
            )));
        }
    }

    let mut degradation = Vec::with_capacity(sources.len());
    let mut quality = Vec::with_capacity(sources.len());
    for &s in &sources {
        let anchor = find(patches, s, View::First, 0)?;
        let positive = find(patches, s, View::First, 1)?;
        let anchor_recipe = patches[anchor].recipe_id;

        let cross: Vec<usize> = patches
            .iter()
            .enumerate()
            .filter(|(_, p)| p.source != s && p.recipe_id != anchor_recipe)
            .map(|(i, _)| i)
            .collect();
        let same_content: Vec<usize> = [find(patches, s, View::Second, 0)?, find(patches, s, View::Second, 1)?]
            .into_iter()
            .filter(|&i| patches[i].recipe_id != anchor_recipe)
            .collect();

        if !cross.is_empty() {
            degradation.push(Triplet {
                anchor,
                positive,
                negatives: cross.clone(),
            });
        }
        let mut qn = cross;
        qn.extend(same_content);
        if !qn.is_empty() {
            quality.push(Triplet {
                anchor,
                positive,
                negatives: qn,
            });
        }
    }
    Ok(ContrastiveBatch {
        patches: patches.to_vec(),
        degradation,
        quality,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; rejects zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// `-log(exp(s_p/τ) / (exp(s_p/τ) + Σ_k exp(s_k/τ)))` with cosine
/// similarities, evaluated with a shifted log-sum-exp.
pub fn info_nce(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if negatives.is_empty() {
        return Err(Error::invalid("InfoNCE needs at least one negative"));
    }
    let pos = cosine(anchor, positive)? / temperature;
    let mut logits = vec![pos];
    for n in negatives {
        logits.push(cosine(anchor, n)? / temperature);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    Ok(lse - pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize) -> Vec<PatchRef> {
        (0..n)
            .flat_map(|s| PatchRef::quad(s, 100 + 2 * s as u64, 101 + 2 * s as u64))
            .collect()
    }

    #[test]
    fn split_examples() {
        let (u, l) = split_representation(&[1, 2, 3, 4]).unwrap();
        assert_eq!((u, l), (&[1, 2][..], &[3, 4][..]));
        assert!(split_representation(&[1, 2, 3]).is_err());
    }

    #[test]
    fn quality_half_has_two_extra_negatives() {
        let b = build_contrastive_batch(&batch(2)).unwrap();
        for (d, q) in b.degradation.iter().zip(&b.quality) {
            assert_eq!(q.negatives.len(), d.negatives.len() + 2);
            assert_eq!(d.negatives.len(), 4);
        }
    }

    #[test]
    fn single_source_rejected() {
        assert!(build_contrastive_batch(&batch(1)).is_err());
    }

    #[test]
    fn incomplete_source_rejected() {
        let mut p = batch(3);
        p.pop();
        assert!(build_contrastive_batch(&p).is_err());
    }

    #[test]
    fn shared_recipe_is_not_a_negative() {
        let mut p = batch(2);
        // source 1's first view shares the anchor recipe of source 0
        p[4].recipe_id = 100;
        p[5].recipe_id = 100;
        let b = build_contrastive_batch(&p).unwrap();
        assert_eq!(b.degradation[0].negatives, vec![6, 7]);
    }

    #[test]
    fn equal_logits_give_log_k_plus_one() {
        let a = [1.0, 0.0, 0.0];
        let negs: Vec<&[f64]> = vec![&a, &a, &a];
        let l = info_nce(&a, &a, &negs, 0.07).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn info_nce_rejects_bad_inputs() {
        let a = [1.0, 0.0];
        let z = [0.0, 0.0];
        assert!(info_nce(&a, &a, &[&a[..]], 0.0).is_err());
        assert!(info_nce(&a, &a, &[], 0.1).is_err());
        assert!(info_nce(&z, &a, &[&a[..]], 0.1).is_err());
    }
}
