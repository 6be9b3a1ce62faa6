use dri_iqa::eval::{
    emit_scatter_plot, partition, plcc, read_plot_annotation, records_from, run_protocol_with, srocc, ProtocolSpec,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ranks 1..n by sorting; valid only for tie-free data.
fn brute_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = (rank + 1) as f64;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn srocc_matches_pearson_of_ranks_on_random_vectors() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let s: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let p: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let got = srocc(&records_from(&s, &p)).unwrap().value;
        let want = pearson(&brute_ranks(&s), &brute_ranks(&p));
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }
}

#[test]
fn hand_evaluated_cases() {
    let s = [1.0, 2.0, 3.0, 4.0, 5.0];
    let p = [1.0, 2.0, 3.0, 5.0, 4.0];
    assert!((srocc(&records_from(&s, &p)).unwrap().value - 0.9).abs() <= 1e-9);
    let v = plcc(&records_from(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0])).unwrap();
    assert!((v - 5.0 / (2.0f64 * 114.0 / 9.0).sqrt()).abs() <= 1e-9);
    assert!((v - 0.9934).abs() < 1e-4);
}

#[test]
fn shuffled_label_control() {
    for seed in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mos: Vec<f64> = (0..200).map(|_| 1.0 + 4.0 * r.random::<f64>()).collect();
        let mut shuffled = mos.clone();
        shuffled.shuffle(&mut r);
        let random: Vec<f64> = (0..200).map(|_| r.random::<f64>()).collect();
        for pred in [&shuffled, &random] {
            let v = srocc(&records_from(&mos, pred)).unwrap().value;
            assert!(v.abs() < 0.2, "seed {seed}: {v}");
        }
    }
}

#[test]
fn protocol_is_deterministic_and_partitions_are_exhaustive() {
    let spec = ProtocolSpec {
        splits: 3,
        seeds: vec![1, 2],
        train_fraction: 0.8,
        partition_seed: 5,
    };
    let eval = |ctx: &dri_iqa::eval::RunContext| {
        let t = &ctx.partition.test;
        Ok(records_from(
            &t.iter().map(|&i| i as f64).collect::<Vec<_>>(),
            &t.iter().map(|&i| ((i * 7 + ctx.seed as usize) % 13) as f64).collect::<Vec<_>>(),
        ))
    };
    let a = run_protocol_with(40, &spec, eval).unwrap();
    let b = run_protocol_with(40, &spec, eval).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.runs.len(), 6);
    let mean = a.runs.iter().map(|r| r.srocc).sum::<f64>() / 6.0;
    assert!((a.mean_srocc - mean).abs() < 1e-12);
    for split in 0..3 {
        let p = partition(40, 0.8, 5, split).unwrap();
        let mut all: Vec<usize> = p.train.iter().chain(&p.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }
}

#[test]
fn plot_annotation_matches_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let s: Vec<f64> = (0..100).map(|_| r.random::<f64>() * 4.0 + 1.0).collect();
    let p: Vec<f64> = s.iter().map(|v| v + r.random::<f64>()).collect();
    let recs = records_from(&s, &p);
    let path = dir.path().join("scatter.png");
    let ann = emit_scatter_plot(&recs, &path).unwrap();
    assert!(std::fs::metadata(&path).unwrap().len() > 0);
    let back = read_plot_annotation(&path).unwrap();
    assert_eq!(back.srocc, srocc(&recs).unwrap().value);
    assert_eq!(back.plcc, plcc(&recs).unwrap());
    assert_eq!(ann, back);
}

/// Distinct values: a shuffled grid with per-cell jitter.
fn distinct(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (Just((0..n).collect::<Vec<usize>>()).prop_shuffle(), proptest::collection::vec(0.0f64..0.5, n))
        .prop_map(|(order, jitter)| order.iter().zip(jitter).map(|(&i, j)| (i as f64 + j) * 4.0 - 80.0).collect())
}

fn tie_free() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| (distinct(n), distinct(n)))
}

proptest! {
    #[test]
    fn metrics_stay_in_range((s, p) in tie_free()) {
        let recs = records_from(&s, &p);
        let v = srocc(&recs).unwrap().value;
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
        if let Ok(c) = plcc(&recs) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }
    }

    #[test]
    fn srocc_invariant_under_increasing_maps((s, p) in tie_free()) {
        let base = srocc(&records_from(&s, &p)).unwrap().value;
        let maps: [fn(f64) -> f64; 3] = [|x| (x / 50.0).exp(), |x| x * x * x, |x| 3.0 * x - 7.0];
        for f in maps {
            let q: Vec<f64> = p.iter().map(|&x| f(x)).collect();
            let v = srocc(&records_from(&s, &q)).unwrap().value;
            prop_assert!((v - base).abs() <= 1e-12, "{} vs {}", v, base);
        }
    }

    #[test]
    fn plcc_affine_invariance_and_sign((s, p) in tie_free(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        if let Ok(base) = plcc(&records_from(&s, &p)) {
            let q: Vec<f64> = p.iter().map(|x| a * x + b).collect();
            let t: Vec<f64> = s.iter().map(|x| a * x + b).collect();
            let neg: Vec<f64> = p.iter().map(|x| -x).collect();
            prop_assert!((plcc(&records_from(&s, &q)).unwrap() - base).abs() <= 1e-12);
            prop_assert!((plcc(&records_from(&t, &p)).unwrap() - base).abs() <= 1e-12);
            prop_assert!((plcc(&records_from(&s, &neg)).unwrap() + base).abs() <= 1e-12);
        }
    }
}
