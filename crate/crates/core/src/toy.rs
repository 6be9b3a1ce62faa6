//! Procedural "natural-ish" clean images and a synthetic IQA dataset whose
//! MOS is a clamped, decreasing function of the recipe severity index.

use rand::Rng;

use crate::buffer::ImageBuffer;
use crate::degrade::{apply_recipe, sample_recipe, severity_index, DegradationRecipe, Palette};
use crate::error::Result;
use crate::rng::{self, domain};

/// Severity index at which the synthetic MOS bottoms out.
pub const MOS_SEVERITY_CAP: f64 = 3.0;

/// `5 - 4 * min(index, cap) / cap`, so MOS lies in `[1, 5]`.
pub fn synthetic_mos(severity_index: f64) -> f64 {
    5.0 - 4.0 * severity_index.clamp(0.0, MOS_SEVERITY_CAP) / MOS_SEVERITY_CAP
}

struct Blob {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    color: [f32; 3],
    square: bool,
}

/// A smooth gradient background with soft-edged shapes and a low-amplitude
/// oriented texture. Deterministic in `seed`.
pub fn clean_image(seed: u64, height: usize, width: usize) -> ImageBuffer {
    let mut r = rng::keyed(seed, &[domain::TOY_IMAGE]);
    let c0: [f32; 3] = [r.random(), r.random(), r.random()];
    let c1: [f32; 3] = [r.random(), r.random(), r.random()];
    let angle: f32 = r.random::<f32>() * std::f32::consts::TAU;
    let (ga, gb) = (angle.cos(), angle.sin());

    let n_blobs = r.random_range(3..7);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cy: r.random::<f32>() * height as f32,
            cx: r.random::<f32>() * width as f32,
            ry: (0.08 + 0.3 * r.random::<f32>()) * height as f32,
            rx: (0.08 + 0.3 * r.random::<f32>()) * width as f32,
            color: [r.random(), r.random(), r.random()],
            square: r.random::<bool>(),
        })
        .collect();

    let freq: f32 = 0.15 + 0.6 * r.random::<f32>();
    let tex_angle: f32 = r.random::<f32>() * std::f32::consts::PI;
    let (ta, tb) = (tex_angle.cos(), tex_angle.sin());
    let tex_amp: f32 = 0.03 + 0.07 * r.random::<f32>();

    let mut img = vec![0.0f32; 3 * height * width];
    let n = height * width;
    for y in 0..height {
        for x in 0..width {
            let u = (ga * x as f32 / width as f32 + gb * y as f32 / height as f32) * 0.5 + 0.5;
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - u) + c1[c] * u;
            }
            for b in &blobs {
                let dy = (y as f32 - b.cy) / b.ry;
                let dx = (x as f32 - b.cx) / b.rx;
                let d = if b.square {
                    dy.abs().max(dx.abs())
                } else {
                    (dy * dy + dx * dx).sqrt()
                };
                // soft edge over ~1.5 px
                let alpha = ((1.0 - d) * b.ry.min(b.rx) / 1.5).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - alpha) + b.color[c] * alpha;
                }
            }
            let t = tex_amp * (freq * (ta * x as f32 + tb * y as f32)).sin();
            for c in 0..3 {
                img[c * n + y * width + x] = (px[c] + t).clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::new(height, width, img).expect("finite procedural image")
}

/// One synthetic dataset row.
#[derive(Clone, Debug)]
pub struct ToyRow {
    pub image: ImageBuffer,
    pub reference: ImageBuffer,
    pub recipe: DegradationRecipe,
    pub mos: f64,
    pub content_id: usize,
}

/// `n_clean` procedural references, each degraded `per_image` times with
/// recipes drawn from `palette`.
pub fn synthetic_dataset(
    n_clean: usize,
    per_image: usize,
    size: usize,
    palette: &Palette,
    seed: u64,
) -> Result<Vec<ToyRow>> {
    let mut rows = Vec::with_capacity(n_clean * per_image);
    for content_id in 0..n_clean {
        let reference = clean_image(rng::derive_seed(seed, &[domain::DATASET, content_id as u64]), size, size);
        for k in 0..per_image {
            let recipe_seed = rng::derive_seed(seed, &[domain::DATASET, content_id as u64, k as u64 + 1]);
            let recipe = sample_recipe(palette, recipe_seed, crate::degrade::MAX_RECIPE_STEPS)?;
            let image = apply_recipe(&reference, &recipe)?;
            rows.push(ToyRow {
                mos: synthetic_mos(severity_index(&recipe)),
                image,
                reference: reference.clone(),
                recipe,
                content_id,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_images_are_deterministic_and_varied() {
        assert_eq!(clean_image(1, 32, 32), clean_image(1, 32, 32));
        assert!(clean_image(1, 32, 32).mse(&clean_image(2, 32, 32)).unwrap() > 1e-3);
    }

    #[test]
    fn mos_is_clamped_and_decreasing() {
        assert_eq!(synthetic_mos(0.0), 5.0);
        assert_eq!(synthetic_mos(10.0), 1.0);
        assert!(synthetic_mos(1.0) > synthetic_mos(2.0));
    }

    #[test]
    fn dataset_shape() {
        let rows = synthetic_dataset(3, 2, 24, &Palette::default_six(), 0).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].reference, rows[1].reference);
        assert!(rows.iter().all(|r| (1.0..=5.0).contains(&r.mos)));
    }
}
