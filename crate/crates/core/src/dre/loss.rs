use candle_core::{DType, Tensor, D};

use crate::dre::contrastive::{ContrastiveBatch, Triplet};
use crate::error::{Error, Result};

const MASKED_LOGIT: f64 = -1e9;

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// L2-normalizes each row of a `(M, d)` matrix; zero rows are rejected.
pub fn normalize_rows(x: &Tensor) -> Result<Tensor> {
    let sq = x.sqr()?.sum_keepdim(1)?;
    let norms = sq.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if let Some(i) = norms.iter().position(|n| *n == 0.0) {
        return Err(Error::Degenerate(format!(
            "row {i} is a zero vector; cosine similarity is undefined"
        )));
    }
    Ok(x.broadcast_div(&sq.sqrt()?)?)
}

/// Row-wise `logsumexp(logits) - logits[:, 0]`, averaged over rows.
fn cross_entropy_first(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let lse = (logits.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()? + max)?;
    let first = logits.narrow(D::Minus1, 0, 1)?;
    Ok((lse - first)?.mean_all()?)
}

/// InfoNCE for one anchor: `anchor`, `positive` are `(d,)`, `negatives` is
/// `(K, d)`.
pub fn info_nce(anchor: &Tensor, positive: &Tensor, negatives: &Tensor, tau: f64) -> Result<Tensor> {
    check_temperature(tau)?;
    let (k, d) = negatives.dims2()?;
    if k == 0 {
        return Err(Error::invalid("InfoNCE needs at least one negative"));
    }
    if anchor.dims1()? != d || positive.dims1()? != d {
        return Err(Error::ShapeMismatch("anchor, positive and negatives must share a dimension".into()));
    }
    let a = normalize_rows(&anchor.unsqueeze(0)?)?;
    let others = normalize_rows(&Tensor::cat(&[&positive.unsqueeze(0)?, negatives], 0)?)?;
    let logits = (a.matmul(&others.t()?)? / tau)?;
    cross_entropy_first(&logits)
}

/// Mean InfoNCE over the triplets of one half, given that half's
/// representations `(M, d)`. Negative lists may differ in length; shorter
/// lists are padded with masked logits.
pub fn half_info_nce(reps: &Tensor, triplets: &[Triplet], tau: f64) -> Result<Tensor> {
    half_info_nce_with_keys(reps, reps, triplets, tau)
}

/// As [`half_info_nce`], but positives and negatives are read from `keys`
/// (e.g. a momentum encoder's output) while anchors come from `reps`.
pub fn half_info_nce_with_keys(reps: &Tensor, keys: &Tensor, triplets: &[Triplet], tau: f64) -> Result<Tensor> {
    check_temperature(tau)?;
    if reps.dims() != keys.dims() {
        return Err(Error::ShapeMismatch("queries and keys must have the same shape".into()));
    }
    let dev = reps.device();
    if triplets.is_empty() {
        return Ok(Tensor::zeros((), reps.dtype(), dev)?);
    }
    let m = reps.dim(0)?;
    let width = 1 + triplets.iter().map(|t| t.negatives.len()).max().unwrap_or(0);
    let mut index = Vec::with_capacity(triplets.len() * width);
    let mut mask = Vec::with_capacity(triplets.len() * width);
    let mut anchors = Vec::with_capacity(triplets.len());
    for t in triplets {
        if t.negatives.is_empty() {
            return Err(Error::invalid("InfoNCE needs at least one negative"));
        }
        if t.anchor >= m || t.positive >= m || t.negatives.iter().any(|&n| n >= m) {
            return Err(Error::invalid("triplet index outside the representation batch"));
        }
        anchors.push(t.anchor as u32);
        index.push(t.positive as u32);
        mask.push(0.0f64);
        for j in 0..width - 1 {
            match t.negatives.get(j) {
                Some(&n) => {
                    index.push(n as u32);
                    mask.push(0.0);
                }
                None => {
                    index.push(t.anchor as u32);
                    mask.push(MASKED_LOGIT);
                }
            }
        }
    }
    let zq = normalize_rows(reps)?;
    let zk = if reps.id() == keys.id() { zq.clone() } else { normalize_rows(keys)? };
    let sims = (zq.matmul(&zk.t()?)? / tau)?;
    let anchors = Tensor::from_vec(anchors, triplets.len(), dev)?;
    let index = Tensor::from_vec(index, (triplets.len(), width), dev)?;
    let mask = Tensor::from_vec(mask, (triplets.len(), width), dev)?.to_dtype(reps.dtype())?;
    let logits = (sims.index_select(&anchors, 0)?.gather(&index, 1)? + mask)?;
    cross_entropy_first(&logits)
}

/// Per-half and combined contrastive losses (scalar tensors).
#[derive(Clone, Debug)]
pub struct DualContrastiveLoss {
    pub degradation: Tensor,
    pub quality: Tensor,
    pub total: Tensor,
}

/// `reps` is `(M, D)` with rows in the order of `batch.patches`. The upper
/// half feeds the degradation triplets, the lower half the quality ones;
/// the total is their plain average.
pub fn dual_contrastive_loss(batch: &ContrastiveBatch, reps: &Tensor, tau: f64) -> Result<DualContrastiveLoss> {
    dual_contrastive_loss_with_keys(batch, reps, reps, tau)
}

/// As [`dual_contrastive_loss`] with a separate key matrix.
pub fn dual_contrastive_loss_with_keys(
    batch: &ContrastiveBatch,
    reps: &Tensor,
    keys: &Tensor,
    tau: f64,
) -> Result<DualContrastiveLoss> {
    let (m, d) = reps.dims2()?;
    if m != batch.patches.len() {
        return Err(Error::ShapeMismatch(format!(
            "{m} representations for {} patches",
            batch.patches.len()
        )));
    }
    if d % 2 != 0 {
        return Err(Error::invalid(format!("representation dimension {d} is odd")));
    }
    let shared = reps.id() == keys.id();
    let halves = |start: usize| -> Result<(Tensor, Tensor)> {
        let q = reps.narrow(1, start, d / 2)?;
        let k = if shared { q.clone() } else { keys.narrow(1, start, d / 2)? };
        Ok((q, k))
    };
    let (uq, uk) = halves(0)?;
    let (lq, lk) = halves(d / 2)?;
    let degradation = half_info_nce_with_keys(&uq, &uk, &batch.degradation, tau)?;
    let quality = half_info_nce_with_keys(&lq, &lk, &batch.quality, tau)?;
    let total = ((&degradation + &quality)? * 0.5)?;
    Ok(DualContrastiveLoss {
        degradation,
        quality,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dre::contrastive::{self, build_contrastive_batch, PatchRef};
    use candle_core::Device;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu).unwrap()
    }

    #[test]
    fn matches_slice_reference() {
        let a = vec![0.3, -1.2, 0.5, 2.0];
        let p = vec![0.1, -1.0, 0.7, 1.5];
        let n1 = vec![1.0, 0.2, -0.3, 0.0];
        let n2 = vec![-0.5, 0.5, 0.5, -0.5];
        let expected = contrastive::info_nce(&a, &p, &[&n1, &n2], 0.1).unwrap();
        let dev = Device::Cpu;
        let got = info_nce(
            &Tensor::new(a.as_slice(), &dev).unwrap(),
            &Tensor::new(p.as_slice(), &dev).unwrap(),
            &t2(&[n1, n2]),
            0.1,
        )
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn total_is_mean_of_halves() {
        let patches: Vec<PatchRef> = (0..3).flat_map(|s| PatchRef::quad(s, 2 * s as u64, 2 * s as u64 + 1)).collect();
        let batch = build_contrastive_batch(&patches).unwrap();
        let reps = Tensor::randn(0f64, 1.0, (12, 8), &Device::Cpu).unwrap();
        let l = dual_contrastive_loss(&batch, &reps, 0.07).unwrap();
        let d = l.degradation.to_scalar::<f64>().unwrap();
        let q = l.quality.to_scalar::<f64>().unwrap();
        assert_eq!(l.total.to_scalar::<f64>().unwrap(), (d + q) * 0.5);
        assert!(d > 0.0 && q > 0.0);
    }

    #[test]
    fn zero_vector_and_bad_temperature_rejected() {
        let dev = Device::Cpu;
        let z = Tensor::zeros(3, DType::F64, &dev).unwrap();
        let o = Tensor::ones(3, DType::F64, &dev).unwrap();
        let n = Tensor::ones((1, 3), DType::F64, &dev).unwrap();
        assert!(info_nce(&z, &o, &n, 0.1).is_err());
        assert!(info_nce(&o, &o, &n, -1.0).is_err());
    }
}
