use dri_iqa_web::{correlation, demo_records, info_nce_sweep, kind_names, records_from_csv, synthesize};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn kind_names_cover_the_palette() {
    let names = parse(&kind_names());
    assert_eq!(names.as_array().unwrap().len(), 6);
}

#[test]
fn synthesis_is_deterministic_and_well_formed() {
    let a = synthesize(3, 9, 40, 0b111111, 0.5).unwrap();
    let b = synthesize(3, 9, 40, 0b111111, 0.5).unwrap();
    assert_eq!(a.degraded_rgba(), b.degraded_rgba());
    assert_eq!(a.recipe_json(), b.recipe_json());
    let px = a.clean_rgba();
    assert_eq!(px.len(), 40 * 40 * 4);
    assert!(px.chunks(4).all(|p| p[3] == 255));
    assert_eq!(a.size(), 40);
    assert!((1.0..=5.0).contains(&a.mos()));
    let steps = parse(&a.recipe_json());
    let sum: f64 = steps.as_array().unwrap().iter().map(|s| s["severity"].as_f64().unwrap()).sum();
    assert!((sum - a.severity_index()).abs() < 1e-6);
}

#[test]
fn empty_mask_leaves_the_image_clean() {
    let s = synthesize(1, 2, 16, 0, 1.0).unwrap();
    assert_eq!(s.clean_rgba(), s.degraded_rgba());
    assert_eq!(s.mos(), 5.0);
    assert_eq!(s.mse(), 0.0);
    assert_eq!(s.recipe_json(), "[]");
}

#[test]
fn single_kind_mask_restricts_the_chain() {
    for seed in 0..10 {
        let s = synthesize(1, seed, 16, 0b000010, 1.0).unwrap();
        let steps = parse(&s.recipe_json());
        let steps = steps.as_array().unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0]["kind"], parse(&kind_names())[1]);
    }
    assert!(synthesize(1, 1, 4, 1, 0.5).is_err());
}

#[test]
fn correlation_matches_core_metrics() {
    let v = parse(&correlation(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 5.0, 4.0]).unwrap());
    assert!((v["srocc"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    assert_eq!(v["n"], 5);
    assert!(correlation(&[1.0, 2.0], &[1.0]).is_err());
    let flat = parse(&correlation(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap());
    assert!(flat["plcc"].is_null());
}

#[test]
fn records_csv_round_trip() {
    let text = "split,seed,id,subjective,predicted\n0,0,\"a,1\",4.5,4.1\n0,0,b,2.0,2.5\n1,1,c,3.0,3.2\n";
    let v = parse(&records_from_csv(text).unwrap());
    assert_eq!(floats(&v["subjective"]), vec![4.5, 2.0, 3.0]);
    assert_eq!(floats(&v["predicted"]), vec![4.1, 2.5, 3.2]);
    assert!(records_from_csv("id,score\nx,1\n").unwrap_err().contains("subjective"));
    assert!(records_from_csv("subjective,predicted\n1,nan\n").is_err());
}

#[test]
fn demo_records_degrade_with_noise() {
    let clean = parse(&demo_records(200, 0.0, 1).unwrap());
    let s = floats(&clean["subjective"]);
    assert_eq!(s, floats(&clean["predicted"]));
    assert!(s.iter().all(|m| (1.0..=5.0).contains(m)));
    let noisy = parse(&demo_records(200, 2.0, 1).unwrap());
    let a = parse(&correlation(&floats(&noisy["subjective"]), &floats(&noisy["predicted"])).unwrap());
    let b = parse(&correlation(&s, &s).unwrap());
    assert!(a["srocc"].as_f64().unwrap() < b["srocc"].as_f64().unwrap());
}

#[test]
fn info_nce_sweep_closed_forms() {
    let taus = [0.05, 0.1, 0.5, 1.0];
    // All similarities equal: ln(K+1) at every temperature.
    let v = parse(&info_nce_sweep(0.3, &[0.3; 7], &taus).unwrap());
    for l in floats(&v["loss"]) {
        assert!((l - 8f64.ln()).abs() < 1e-12);
    }
    assert!((v["chance"].as_f64().unwrap() - 8f64.ln()).abs() < 1e-12);
    // A dominant positive: colder is better and the weights are exp(-loss).
    let v = parse(&info_nce_sweep(0.9, &[0.1, -0.2, 0.4], &taus).unwrap());
    let loss = floats(&v["loss"]);
    assert!(loss.windows(2).all(|w| w[0] < w[1]), "{loss:?}");
    for (l, p) in loss.iter().zip(floats(&v["p_positive"])) {
        assert!(((-l).exp() - p).abs() < 1e-12);
    }
    assert!(info_nce_sweep(1.5, &[0.0], &taus).is_err());
    assert!(info_nce_sweep(0.5, &[], &taus).is_err());
    assert!(info_nce_sweep(0.5, &[0.1], &[0.0]).is_err());
}
