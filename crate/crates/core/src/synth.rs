//! Synthetic chest-radiograph stand-ins for desk-scale experiments.
//!
//! Each image shows two dark, slightly rotated ellipses ("lungs") on a
//! brighter body with a smooth intensity gradient, horizontal rib-like
//! stripes and Gaussian noise. The mask is the union of the ellipses and
//! always has exactly two 8-connected components.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{DatasetManifest, ManifestEntry, MaskRef, Sample, Source, Split};
use crate::error::{Result, SegError};
use crate::image::{write_image, write_mask, Image};
use crate::morphology::{connected_components, BinaryMask};

/// Smallest side length that reliably keeps the two lungs apart.
pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }

    /// Signed distance proxy: < 0 inside, 0 on the rim.
    fn level(&self, y: f64, x: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt() - 1.0
    }
}

/// Draws one sample of size `h x w`.
pub fn synthesize(h: usize, w: usize, rng: &mut impl Rng, id: impl Into<String>) -> Result<Sample> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(SegError::Config(format!(
            "synthetic images must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
        )));
    }
    let (hf, wf) = (h as f64, w as f64);
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    loop {
        let cy = hf * rng.random_range(0.45..0.55);
        let lung = |rng: &mut dyn rand::RngCore, side: f64| Ellipse {
            cy: cy + hf * rng.random_range(-0.03..0.03),
            cx: wf * (0.5 + side * rng.random_range(0.18..0.22)),
            ry: hf * rng.random_range(0.25..0.34),
            rx: wf * rng.random_range(0.11..0.15),
            angle: side * rng.random_range(0.0..0.15),
        };
        let left = lung(rng, -1.0);
        let right = lung(rng, 1.0);
        let mask = BinaryMask::from_fn(h, w, |y, x| {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            left.contains(py, px) || right.contains(py, px)
        });
        if connected_components(&mask).len() != 2 {
            continue;
        }

        let body = rng.random_range(0.65..0.8);
        let lung_level = rng.random_range(0.22..0.32);
        let (gy, gx) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        let period = hf * rng.random_range(0.07..0.1);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let rib_amp = rng.random_range(0.04..0.08);
        let image = Image::from_fn(h, w, |y, x| {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let grad = gy * (py / hf - 0.5) + gx * (px / wf - 0.5);
            // soft rim over about one pixel
            let d = left.level(py, px).min(right.level(py, px)) * (hf.min(wf) * 0.12);
            let inside = 1.0 / (1.0 + (d * 4.0).exp());
            let base = body + (lung_level - body) * inside;
            let ribs = rib_amp * (std::f64::consts::TAU * py / period + phase).sin();
            (base + grad + ribs + noise.sample(rng)).clamp(0.0, 1.0) as f32
        });
        return Sample::new(id, image, mask);
    }
}

/// Writes `count` samples under `out_dir`:
/// `synthetic/images/<id>.png`, `synthetic/masks/<id>.png` and
/// `manifest.tsv`. Every entry is marked `train`; split with
/// [`DatasetManifest::split`] afterwards.
pub fn generate_synthetic(count: usize, size: (usize, usize), seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let images = out_dir.join("synthetic").join("images");
    let masks = out_dir.join("synthetic").join("masks");
    for d in [&images, &masks] {
        fs::create_dir_all(d).map_err(|source| SegError::Write {
            path: d.clone(),
            source,
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = DatasetManifest::new(out_dir);
    let width = count.saturating_sub(1).to_string().len().max(3);
    for i in 0..count {
        let id = format!("syn{i:0width$}");
        let s = synthesize(size.0, size.1, &mut rng, &id)?;
        let rel_img = PathBuf::from("synthetic/images").join(format!("{id}.png"));
        let rel_mask = PathBuf::from("synthetic/masks").join(format!("{id}.png"));
        write_image(&out_dir.join(&rel_img), &s.image)?;
        write_mask(&out_dir.join(&rel_mask), &s.mask)?;
        manifest.entries.push(ManifestEntry {
            id,
            source: Source::Synthetic,
            split: Split::Train,
            image: rel_img,
            mask: MaskRef::Single(rel_mask),
        });
    }
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// In-memory samples with the same generator, for examples and tests.
pub fn synthetic_samples(count: usize, size: (usize, usize), seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| synthesize(size.0, size.1, &mut rng, format!("syn{i:03}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_split;
    use crate::morphology::StructuringElement;

    #[test]
    fn masks_have_two_components_and_lungs_are_dark() {
        for &(h, w) in &[(16, 16), (32, 48), (64, 64)] {
            for s in synthetic_samples(10, (h, w), 3).unwrap() {
                assert_eq!(connected_components(&s.mask).len(), 2);
                let (mut inside, mut outside, mut ni, mut no) = (0.0, 0.0, 0, 0);
                for y in 0..h {
                    for x in 0..w {
                        let v = s.image.get(y, x) as f64;
                        if s.mask.get(y, x) {
                            inside += v;
                            ni += 1;
                        } else {
                            outside += v;
                            no += 1;
                        }
                    }
                }
                assert!(inside / (ni as f64) + 0.2 < outside / no as f64);
            }
        }
        assert!(synthetic_samples(1, (8, 64), 0).is_err());
    }

    #[test]
    fn files_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic(4, (32, 32), 7, a.path()).unwrap();
        generate_synthetic(4, (32, 32), 7, b.path()).unwrap();
        assert_eq!(ma.len(), 4);
        for e in &ma.entries {
            let fa = fs::read(a.path().join(&e.image)).unwrap();
            let fb = fs::read(b.path().join(&e.image)).unwrap();
            assert_eq!(fa, fb);
        }
        let ta = fs::read(a.path().join("manifest.tsv")).unwrap();
        assert_eq!(ta, fs::read(b.path().join("manifest.tsv")).unwrap());

        let loaded = DatasetManifest::load(&a.path().join("manifest.tsv")).unwrap();
        let samples = load_split(&loaded, Split::Train, &StructuringElement::square(5)).unwrap();
        let direct = synthetic_samples(4, (32, 32), 7).unwrap();
        assert_eq!(samples[2].mask, direct[2].mask);
    }
}
