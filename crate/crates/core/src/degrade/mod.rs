//! Randomized hybrid degradation.
//!
//! A clean image is pushed through an ordered chain of at most six
//! degradations. Each palette kind is a candidate step; candidates are visited
//! in a seeded random order and each one is kept with its selection
//! probability, so the realized chain length varies from draw to draw. Two
//! independent chains over the same clean image give a contrastive pair.

mod ops;
mod palette;

pub use ops::{
    contrast_change, gaussian_blur, gaussian_noise, jpeg_compression, resize_rescale,
    saturation_shift, JPEG_CODEC,
};
pub use palette::{register_palette, DegradationKind, Palette, PaletteEntry};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Upper bound on the number of chained degradations.
pub const MAX_RECIPE_STEPS: usize = 6;

/// One realized step of a recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationOp {
    pub kind: DegradationKind,
    /// Normalized strength in `[0, 1]`; 0 is the mildest setting.
    pub severity: f32,
    pub selection_probability: f32,
    /// Physical range the severity is mapped into.
    pub range: (f32, f32),
    /// For saturation and contrast: scale up (true) or down (false).
    #[serde(default)]
    pub boost: bool,
}

impl DegradationOp {
    /// Physical parameter: blur sigma, noise sigma, JPEG quality, resize
    /// factor, or saturation/contrast scale.
    pub fn parameter(&self) -> f32 {
        let (lo, hi) = self.range;
        let s = self.severity.clamp(0.0, 1.0);
        match self.kind {
            DegradationKind::GaussianBlur | DegradationKind::GaussianNoise => lo + s * (hi - lo),
            DegradationKind::JpegCompression | DegradationKind::ResizeRescale => {
                hi - s * (hi - lo)
            }
            DegradationKind::SaturationShift | DegradationKind::ContrastChange => {
                if self.boost {
                    1.0 + s * (hi - 1.0)
                } else {
                    1.0 - s * (1.0 - lo)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.severity) || !(0.0..=1.0).contains(&self.selection_probability)
        {
            return Err(Error::invalid(format!(
                "step `{}` has severity {} / probability {} outside [0,1]",
                self.kind, self.severity, self.selection_probability
            )));
        }
        Ok(())
    }
}

/// An ordered, replayable chain of degradations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub seed: u64,
    pub steps: Vec<DegradationOp>,
}

impl DegradationRecipe {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn kinds(&self) -> impl Iterator<Item = DegradationKind> + '_ {
        self.steps.iter().map(|s| s.kind)
    }

    /// Identity of the op chain, ignoring the noise seed. Two recipes with
    /// the same steps (including two empty ones) share a fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let parts: Vec<u64> = self
            .steps
            .iter()
            .flat_map(|s| [s.kind.index(), s.severity.to_bits() as u64, s.boost as u64])
            .collect();
        rng::mix(&parts)
    }
}

/// Draws a recipe. Candidate kinds are shuffled with the stream
/// `(seed, RECIPE_ORDER)`; each candidate's inclusion, severity and
/// direction come from `(seed, RECIPE_STEP, position, kind)`.
pub fn sample_recipe(palette: &Palette, seed: u64, max_steps: usize) -> Result<DegradationRecipe> {
    if max_steps > MAX_RECIPE_STEPS {
        return Err(Error::RecipeTooDeep(max_steps));
    }
    let mut order: Vec<usize> = (0..palette.len()).collect();
    order.shuffle(&mut rng::keyed(seed, &[domain::RECIPE_ORDER]));

    let mut steps = Vec::new();
    for (position, &idx) in order.iter().take(max_steps).enumerate() {
        let entry = &palette.entries()[idx];
        let mut r = rng::keyed(
            seed,
            &[domain::RECIPE_STEP, position as u64, entry.kind.index()],
        );
        let keep: f32 = r.random();
        let severity: f32 = r.random();
        let boost: bool = r.random();
        if keep < entry.selection_probability {
            steps.push(DegradationOp {
                kind: entry.kind,
                severity,
                selection_probability: entry.selection_probability,
                range: entry.range,
                boost: boost && entry.kind.is_bidirectional(),
            });
        }
    }
    Ok(DegradationRecipe { seed, steps })
}

/// Applies a single step. `position` keys the noise stream.
pub fn apply_op(
    image: &ImageBuffer,
    op: &DegradationOp,
    seed: u64,
    position: usize,
) -> Result<ImageBuffer> {
    let p = op.parameter();
    Ok(match op.kind {
        DegradationKind::GaussianBlur => gaussian_blur(image, p),
        DegradationKind::GaussianNoise => gaussian_noise(image, p, seed, position),
        DegradationKind::JpegCompression => jpeg_compression(image, p.round().clamp(1.0, 100.0) as u8)?,
        DegradationKind::ResizeRescale => resize_rescale(image, p),
        DegradationKind::SaturationShift => saturation_shift(image, p),
        DegradationKind::ContrastChange => contrast_change(image, p),
    })
}

/// Runs the chain in order. The empty recipe returns an exact copy.
pub fn apply_recipe(image: &ImageBuffer, recipe: &DegradationRecipe) -> Result<ImageBuffer> {
    image.validate()?;
    if recipe.steps.len() > MAX_RECIPE_STEPS {
        return Err(Error::RecipeTooDeep(recipe.steps.len()));
    }
    let mut current = image.clone();
    for (position, op) in recipe.steps.iter().enumerate() {
        op.validate()?;
        current = apply_op(&current, op, recipe.seed, position)?;
    }
    Ok(current)
}

/// Two independently degraded views of the same clean image.
#[derive(Clone, Debug)]
pub struct ContrastivePair {
    pub x1: ImageBuffer,
    pub x2: ImageBuffer,
    pub recipe1: DegradationRecipe,
    pub recipe2: DegradationRecipe,
}

pub fn make_contrastive_pair(
    clean: &ImageBuffer,
    palette: &Palette,
    seed: u64,
) -> Result<ContrastivePair> {
    let recipe1 = sample_recipe(palette, rng::derive_seed(seed, &[domain::PAIR, 1]), MAX_RECIPE_STEPS)?;
    let recipe2 = sample_recipe(palette, rng::derive_seed(seed, &[domain::PAIR, 2]), MAX_RECIPE_STEPS)?;
    Ok(ContrastivePair {
        x1: apply_recipe(clean, &recipe1)?,
        x2: apply_recipe(clean, &recipe2)?,
        recipe1,
        recipe2,
    })
}

/// Sum of step severities.
pub fn severity_index(recipe: &DegradationRecipe) -> f64 {
    recipe.steps.iter().map(|s| s.severity as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn natural() -> ImageBuffer {
        crate::toy::clean_image(11, 48, 48)
    }

    fn single(kind: DegradationKind, severity: f32) -> DegradationRecipe {
        DegradationRecipe {
            seed: 5,
            steps: vec![DegradationOp {
                kind,
                severity,
                selection_probability: 1.0,
                range: kind.default_range(),
                boost: false,
            }],
        }
    }

    #[test]
    fn zero_probability_gives_empty_recipe() {
        let p = Palette::with_probability(0.0);
        for seed in 0..50 {
            assert!(sample_recipe(&p, seed, 6).unwrap().is_empty());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = Palette::default_six();
        assert_eq!(sample_recipe(&p, 42, 6).unwrap(), sample_recipe(&p, 42, 6).unwrap());
    }

    #[test]
    fn too_many_steps_rejected() {
        let p = Palette::default_six();
        assert!(matches!(sample_recipe(&p, 1, 7), Err(Error::RecipeTooDeep(7))));
    }

    #[test]
    fn single_kind_palette_is_closed() {
        let p = register_palette(vec![PaletteEntry::with_default_range(
            DegradationKind::GaussianBlur,
            1.0,
        )])
        .unwrap();
        for seed in 0..20 {
            let r = sample_recipe(&p, seed, 6).unwrap();
            assert!(r.kinds().all(|k| k == DegradationKind::GaussianBlur));
            assert_eq!(r.len(), 1);
        }
    }

    #[test]
    fn empty_recipe_is_identity() {
        let img = natural();
        assert_eq!(apply_recipe(&img, &DegradationRecipe::empty(3)).unwrap(), img);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut img = natural();
        img.data_mut()[3] = f32::INFINITY;
        assert!(matches!(
            apply_recipe(&img, &DegradationRecipe::empty(0)),
            Err(Error::NonFinitePixel(3))
        ));
    }

    #[test]
    fn replay_is_bitwise_equal() {
        let img = natural();
        let p = Palette::with_probability(1.0);
        let r = sample_recipe(&p, 9, 6).unwrap();
        assert_eq!(apply_recipe(&img, &r).unwrap(), apply_recipe(&img, &r).unwrap());
    }

    #[test]
    fn parameters_map_mildest_to_zero_severity() {
        let blur = single(DegradationKind::GaussianBlur, 0.0).steps[0].parameter();
        assert_eq!(blur, 0.5);
        let q = single(DegradationKind::JpegCompression, 1.0).steps[0].parameter();
        assert_eq!(q, 10.0);
        let f = single(DegradationKind::ResizeRescale, 0.0).steps[0].parameter();
        assert_eq!(f, 0.9);
        let mut op = single(DegradationKind::SaturationShift, 1.0).steps[0].clone();
        assert!((op.parameter() - 0.4).abs() < 1e-6);
        op.boost = true;
        assert!((op.parameter() - 1.6).abs() < 1e-6);
    }

    #[test]
    fn severity_index_examples() {
        assert_eq!(severity_index(&DegradationRecipe::empty(0)), 0.0);
        let r = single(DegradationKind::GaussianNoise, 0.7);
        assert!((severity_index(&r) - 0.7).abs() < 1e-7);
    }

    #[test]
    fn all_zero_probability_pair_is_clean() {
        let img = natural();
        let pair = make_contrastive_pair(&img, &Palette::with_probability(0.0), 4).unwrap();
        assert_eq!(pair.x1, img);
        assert_eq!(pair.x2, img);
    }
}
