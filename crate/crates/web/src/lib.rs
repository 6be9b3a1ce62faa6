//! Browser bindings for the demo page: degradation synthesis, a
//! correlation scatter and an InfoNCE temperature explorer.
//!
//! Everything here also runs natively, which is how it is tested.

use dri_iqa::degrade::{
    apply_recipe, register_palette, sample_recipe, severity_index, DegradationKind, DegradationRecipe, PaletteEntry,
    MAX_RECIPE_STEPS,
};
use dri_iqa::dre::info_nce_reference;
use dri_iqa::eval::{plcc, records_from, srocc};
use dri_iqa::toy::{clean_image, synthetic_mos};
use dri_iqa::ImageBuffer;
use rand::Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Palette order used by the kind bitmask.
pub const KINDS: [DegradationKind; 6] = [
    DegradationKind::GaussianBlur,
    DegradationKind::GaussianNoise,
    DegradationKind::JpegCompression,
    DegradationKind::ResizeRescale,
    DegradationKind::SaturationShift,
    DegradationKind::ContrastChange,
];

const MAX_SIDE: u32 = 512;

/// JSON array of kind names; bit `i` of a kind mask selects entry `i`.
#[wasm_bindgen]
pub fn kind_names() -> String {
    json!(KINDS.iter().map(|k| k.as_str()).collect::<Vec<_>>()).to_string()
}

#[wasm_bindgen]
pub struct Synthesis {
    clean: ImageBuffer,
    degraded: ImageBuffer,
    recipe: DegradationRecipe,
}

fn rgba(img: &ImageBuffer) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((img.get(c, y, x) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

#[wasm_bindgen]
impl Synthesis {
    pub fn size(&self) -> u32 {
        self.clean.width() as u32
    }

    pub fn clean_rgba(&self) -> Vec<u8> {
        rgba(&self.clean)
    }

    pub fn degraded_rgba(&self) -> Vec<u8> {
        rgba(&self.degraded)
    }

    /// Steps as `[{kind, severity, parameter, boost}]`.
    pub fn recipe_json(&self) -> String {
        json!(self
            .recipe
            .steps
            .iter()
            .map(|s| json!({
                "kind": s.kind.as_str(),
                "severity": s.severity,
                "parameter": s.parameter(),
                "boost": s.boost,
            }))
            .collect::<Vec<_>>())
        .to_string()
    }

    pub fn severity_index(&self) -> f64 {
        severity_index(&self.recipe)
    }

    /// Synthetic opinion score of the degraded image.
    pub fn mos(&self) -> f64 {
        synthetic_mos(self.severity_index())
    }

    pub fn mse(&self) -> f64 {
        self.degraded.mse(&self.clean).unwrap_or(f64::NAN)
    }
}

/// A procedural clean image of side `size` and one random degradation chain
/// over the kinds selected by `kind_mask`, each kept with
/// `selection_probability`.
#[wasm_bindgen]
pub fn synthesize(
    content_seed: u32,
    recipe_seed: u32,
    size: u32,
    kind_mask: u32,
    selection_probability: f32,
) -> Result<Synthesis, String> {
    if !(8..=MAX_SIDE).contains(&size) {
        return Err(format!("size must be in 8..={MAX_SIDE}, got {size}"));
    }
    let clean = clean_image(content_seed as u64, size as usize, size as usize);
    let entries: Vec<PaletteEntry> = KINDS
        .iter()
        .enumerate()
        .filter(|(i, _)| kind_mask & (1 << i) != 0)
        .map(|(_, &k)| PaletteEntry::with_default_range(k, selection_probability))
        .collect();
    let recipe = if entries.is_empty() {
        DegradationRecipe::empty(recipe_seed as u64)
    } else {
        let palette = register_palette(entries).map_err(|e| e.to_string())?;
        sample_recipe(&palette, recipe_seed as u64, MAX_RECIPE_STEPS).map_err(|e| e.to_string())?
    };
    let degraded = apply_recipe(&clean, &recipe).map_err(|e| e.to_string())?;
    Ok(Synthesis {
        clean,
        degraded,
        recipe,
    })
}

/// `{srocc, plcc, n}`; PLCC is null when undefined.
#[wasm_bindgen]
pub fn correlation(subjective: &[f64], predicted: &[f64]) -> Result<String, String> {
    if subjective.len() != predicted.len() {
        return Err(format!("{} subjective vs {} predicted scores", subjective.len(), predicted.len()));
    }
    let recs = records_from(subjective, predicted);
    let s = srocc(&recs).map_err(|e| e.to_string())?.value;
    Ok(json!({ "srocc": s, "plcc": plcc(&recs).ok(), "n": recs.len() }).to_string())
}

/// Reads the `subjective` and `predicted` columns of a records CSV (as
/// written by `eval`) into `{subjective: [...], predicted: [...]}`.
#[wasm_bindgen]
pub fn records_from_csv(text: &str) -> Result<String, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format!("missing `{name}` column"))
    };
    let (si, pi) = (col("subjective")?, col("predicted")?);
    let mut subjective = Vec::new();
    let mut predicted = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let num = |i: usize| -> Result<f64, String> {
            row.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("row {}: bad number in column {}", line + 2, &headers[i]))
        };
        subjective.push(num(si)?);
        predicted.push(num(pi)?);
    }
    Ok(json!({ "subjective": subjective, "predicted": predicted }).to_string())
}

/// Toy records: scores from `n` random recipes of the default palette and
/// predictions perturbed by uniform noise of half-width `noise`.
#[wasm_bindgen]
pub fn demo_records(n: u32, noise: f64, seed: u32) -> Result<String, String> {
    let palette = dri_iqa::degrade::Palette::default_six();
    let mut r = dri_iqa::rng::keyed(seed as u64, &[0xde30]);
    let mut subjective = Vec::with_capacity(n as usize);
    let mut predicted = Vec::with_capacity(n as usize);
    for i in 0..n {
        let recipe = sample_recipe(&palette, dri_iqa::rng::derive_seed(seed as u64, &[i as u64]), MAX_RECIPE_STEPS)
            .map_err(|e| e.to_string())?;
        let mos = synthetic_mos(severity_index(&recipe));
        subjective.push(mos);
        predicted.push(mos + noise * (2.0 * r.random::<f64>() - 1.0));
    }
    Ok(json!({ "subjective": subjective, "predicted": predicted }).to_string())
}

/// A unit vector at cosine `c` from `(1, 0)`.
fn at_cosine(c: f64) -> [f64; 2] {
    [c, (1.0 - c * c).max(0.0).sqrt()]
}

/// InfoNCE of one anchor over `taus`, given the cosine similarity of the
/// positive and of each negative. Returns `{loss, p_positive, chance}`
/// where `p_positive` is the softmax weight of the positive and `chance`
/// is `ln(K + 1)`.
#[wasm_bindgen]
pub fn info_nce_sweep(positive: f64, negatives: &[f64], taus: &[f64]) -> Result<String, String> {
    if negatives.is_empty() {
        return Err("at least one negative is needed".into());
    }
    if let Some(c) = std::iter::once(&positive).chain(negatives).find(|c| !(-1.0..=1.0).contains(*c)) {
        return Err(format!("cosine {c} outside [-1, 1]"));
    }
    let anchor = [1.0, 0.0];
    let pos = at_cosine(positive);
    let negs: Vec<[f64; 2]> = negatives.iter().map(|&c| at_cosine(c)).collect();
    let neg_refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
    let loss = taus
        .iter()
        .map(|&t| info_nce_reference(&anchor, &pos, &neg_refs, t).map_err(|e| e.to_string()))
        .collect::<Result<Vec<f64>, String>>()?;
    let p: Vec<f64> = loss.iter().map(|l| (-l).exp()).collect();
    Ok(json!({ "loss": loss, "p_positive": p, "chance": ((negatives.len() + 1) as f64).ln() }).to_string())
}
