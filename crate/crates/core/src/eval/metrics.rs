use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A (subjective, predicted) score pair for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub id: String,
    pub subjective: f64,
    pub predicted: f64,
}

impl EvaluationRecord {
    pub fn new(id: impl Into<String>, subjective: f64, predicted: f64) -> Self {
        Self {
            id: id.into(),
            subjective,
            predicted,
        }
    }
}

/// Rank correlation with a flag for the zero-variance case, where the value
/// is defined as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub value: f64,
    pub degenerate: bool,
}

fn columns(records: &[EvaluationRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    if records.len() < 2 {
        return Err(Error::invalid(format!(
            "correlation needs at least 2 records, got {}",
            records.len()
        )));
    }
    let mut s = Vec::with_capacity(records.len());
    let mut p = Vec::with_capacity(records.len());
    for r in records {
        if !r.subjective.is_finite() || !r.predicted.is_finite() {
            return Err(Error::invalid(format!("record `{}` has a non-finite score", r.id)));
        }
        s.push(r.subjective);
        p.push(r.predicted);
    }
    Ok((s, p))
}

/// 1-based average ranks. Returns the ranks and whether any tie occurred.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, bool) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tied = false;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        if j - i > 1 {
            tied = true;
        }
        // positions i..j share the mean of ranks (i+1)..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    (ranks, tied)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank-order correlation.
///
/// Without ties this is `1 - 6 Σ d² / (N (N² - 1))`. With ties it is the
/// Pearson correlation of average ranks. If either column has zero rank
/// variance the result is 0 with `degenerate` set.
pub fn srocc(records: &[EvaluationRecord]) -> Result<RankCorrelation> {
    let (s, p) = columns(records)?;
    let (rs, ts) = average_ranks(&s);
    let (rp, tp) = average_ranks(&p);
    if !ts && !tp {
        let n = s.len() as f64;
        let d2: f64 = rs.iter().zip(&rp).map(|(a, b)| (a - b) * (a - b)).sum();
        return Ok(RankCorrelation {
            value: 1.0 - 6.0 * d2 / (n * (n * n - 1.0)),
            degenerate: false,
        });
    }
    Ok(match pearson(&rs, &rp) {
        Some(value) => RankCorrelation {
            value,
            degenerate: false,
        },
        None => {
            log::warn!("SROCC undefined: a score column has zero rank variance; reporting 0");
            RankCorrelation {
                value: 0.0,
                degenerate: true,
            }
        }
    })
}

/// Pearson linear correlation between subjective and predicted scores.
pub fn plcc(records: &[EvaluationRecord]) -> Result<f64> {
    let (s, p) = columns(records)?;
    for (name, col) in [("subjective", &s), ("predicted", &p)] {
        if col.iter().all(|v| *v == col[0]) {
            return Err(Error::Degenerate(format!("the {name} column has zero variance")));
        }
    }
    pearson(&s, &p).ok_or_else(|| Error::Degenerate("zero variance".into()))
}

pub fn records_from(subjective: &[f64], predicted: &[f64]) -> Vec<EvaluationRecord> {
    subjective
        .iter()
        .zip(predicted)
        .enumerate()
        .map(|(i, (s, p))| EvaluationRecord::new(i.to_string(), *s, *p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_and_reversed_order() {
        let s: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let up: Vec<f64> = s.iter().map(|v| v * 3.0 + 1.0).collect();
        let down: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(srocc(&records_from(&s, &up)).unwrap().value, 1.0);
        assert_eq!(srocc(&records_from(&s, &down)).unwrap().value, -1.0);
    }

    #[test]
    fn single_swap_of_five() {
        let r = records_from(&[1., 2., 3., 4., 5.], &[1., 2., 3., 5., 4.]);
        assert_abs_diff_eq!(srocc(&r).unwrap().value, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn plcc_hand_case() {
        let r = records_from(&[1., 2., 3.], &[2., 4., 7.]);
        let expected = 5.0 / (2.0f64 * 114.0 / 9.0).sqrt();
        assert_abs_diff_eq!(plcc(&r).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(plcc(&r).unwrap(), 0.9934, epsilon = 1e-4);
    }

    #[test]
    fn plcc_affine_and_negation() {
        let s = [0.3, 1.7, 2.2, 5.0, 4.1];
        let p: Vec<f64> = s.iter().map(|v| 2.0 * v + 3.0).collect();
        let n: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(plcc(&records_from(&s, &p)).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plcc(&records_from(&s, &n)).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_records() {
        assert!(srocc(&records_from(&[1.0], &[1.0])).is_err());
        assert!(plcc(&records_from(&[1.0], &[1.0])).is_err());
    }

    #[test]
    fn constant_predictions() {
        let r = records_from(&[1., 2., 3.], &[4., 4., 4.]);
        let c = srocc(&r).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
        let err = plcc(&r).unwrap_err();
        assert!(err.to_string().contains("predicted"));
    }

    #[test]
    fn average_ranks_with_ties() {
        let (r, tied) = average_ranks(&[10.0, 20.0, 10.0, 30.0]);
        assert!(tied);
        assert_eq!(r, vec![1.5, 3.0, 1.5, 4.0]);
    }
}
