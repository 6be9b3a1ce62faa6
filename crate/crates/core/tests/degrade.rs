use std::collections::HashSet;

use dri_iqa::degrade::{
    apply_recipe, make_contrastive_pair, sample_recipe, severity_index, DegradationKind, DegradationOp,
    DegradationRecipe, Palette, MAX_RECIPE_STEPS,
};
use dri_iqa::toy::{clean_image, synthetic_dataset, synthetic_mos};
use dri_iqa::ImageBuffer;
use proptest::prelude::*;

const KINDS: [DegradationKind; 6] = [
    DegradationKind::GaussianBlur,
    DegradationKind::GaussianNoise,
    DegradationKind::JpegCompression,
    DegradationKind::ResizeRescale,
    DegradationKind::SaturationShift,
    DegradationKind::ContrastChange,
];

fn single(kind: DegradationKind, severity: f32, boost: bool) -> DegradationRecipe {
    DegradationRecipe {
        seed: 17,
        steps: vec![DegradationOp {
            kind,
            severity,
            selection_probability: 1.0,
            range: kind.default_range(),
            boost,
        }],
    }
}

#[test]
fn mean_recipe_length_is_three_for_the_default_palette() {
    let p = Palette::default_six();
    let n = 10_000;
    let mut total = 0usize;
    let mut per_kind = [0usize; 6];
    for seed in 0..n {
        let r = sample_recipe(&p, seed, MAX_RECIPE_STEPS).unwrap();
        assert!(r.len() <= MAX_RECIPE_STEPS);
        total += r.len();
        for k in r.kinds() {
            per_kind[KINDS.iter().position(|&x| x == k).unwrap()] += 1;
        }
        // No kind appears twice in one chain.
        let distinct: HashSet<_> = r.kinds().collect();
        assert_eq!(distinct.len(), r.len());
    }
    let mean = total as f64 / n as f64;
    assert!((mean - 3.0).abs() <= 0.1, "mean length {mean}");
    for (k, c) in KINDS.iter().zip(per_kind) {
        let rate = c as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.03, "{k}: {rate}");
    }
}

#[test]
fn selection_probability_scales_mean_length() {
    for (prob, want) in [(0.25f32, 1.5f64), (1.0, 6.0)] {
        let p = Palette::with_probability(prob);
        let mean = (0..4000).map(|s| sample_recipe(&p, s, 6).unwrap().len()).sum::<usize>() as f64 / 4000.0;
        assert!((mean - want).abs() < 0.1, "p={prob}: {mean}");
    }
}

#[test]
fn contrastive_pair_recipes_rarely_collide() {
    let p = Palette::default_six();
    let img = clean_image(3, 8, 8);
    let mut distinct = 0;
    for seed in 0..1000 {
        let pair = make_contrastive_pair(&img, &p, seed).unwrap();
        if pair.recipe1.fingerprint() != pair.recipe2.fingerprint() {
            distinct += 1;
        }
    }
    assert!(distinct > 950, "{distinct}/1000 distinct");
}

#[test]
fn distortion_grows_with_severity_for_every_kind() {
    let img = clean_image(21, 64, 64);
    let levels = [0.0f32, 0.35, 0.7, 1.0];
    for kind in KINDS {
        let boosts: &[bool] = if kind.is_bidirectional() { &[false, true] } else { &[false] };
        for &boost in boosts {
            let mse: Vec<f64> = levels
                .iter()
                .map(|&s| apply_recipe(&img, &single(kind, s, boost)).unwrap().mse(&img).unwrap())
                .collect();
            for w in mse.windows(2) {
                assert!(w[1] > w[0], "{kind} boost={boost}: {mse:?}");
            }
        }
    }
}

#[test]
fn toy_mos_follows_severity_index() {
    let rows = synthetic_dataset(4, 5, 32, &Palette::default_six(), 2).unwrap();
    assert_eq!(rows.len(), 20);
    for r in &rows {
        let idx = severity_index(&r.recipe);
        assert!((r.mos - (5.0 - 4.0 * idx.min(3.0) / 3.0)).abs() < 1e-12);
        assert_eq!(r.mos, synthetic_mos(idx));
        assert!((1.0..=5.0).contains(&r.mos));
        assert_eq!(apply_recipe(&r.reference, &r.recipe).unwrap(), r.image);
    }
}

fn arbitrary_image() -> impl Strategy<Value = ImageBuffer> {
    (8usize..40, 8usize..40, any::<u64>()).prop_flat_map(|(h, w, _)| {
        proptest::collection::vec(-0.5f32..1.5, 3 * h * w).prop_map(move |d| ImageBuffer::new(h, w, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_stay_finite_in_range_and_shaped(img in arbitrary_image(), seed in any::<u64>(), prob in 0.0f32..=1.0) {
        let r = sample_recipe(&Palette::with_probability(prob), seed, MAX_RECIPE_STEPS).unwrap();
        let out = apply_recipe(&img, &r).unwrap();
        prop_assert_eq!((out.height(), out.width()), (img.height(), img.width()));
        prop_assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_seed_same_bits(seed in any::<u64>(), content in 0u64..1000) {
        let img = clean_image(content, 24, 24);
        let p = Palette::default_six();
        let a = make_contrastive_pair(&img, &p, seed).unwrap();
        let b = make_contrastive_pair(&img, &p, seed).unwrap();
        prop_assert_eq!(&a.recipe1, &b.recipe1);
        prop_assert_eq!(&a.recipe2, &b.recipe2);
        let bits = |x: &ImageBuffer| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.x1), bits(&b.x1));
        prop_assert_eq!(bits(&a.x2), bits(&b.x2));
    }

    #[test]
    fn recipe_json_round_trip_replays(seed in any::<u64>()) {
        let img = clean_image(5, 16, 16);
        let r = sample_recipe(&Palette::default_six(), seed, MAX_RECIPE_STEPS).unwrap();
        let back: DegradationRecipe = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(apply_recipe(&img, &back).unwrap(), apply_recipe(&img, &r).unwrap());
    }
}
