//! Resizing and geometric augmentation.
//!
//! Augmentation builds one inverse map from output to input coordinates
//! (crop, then zoom and rotation about the image center) and samples the
//! image and the mask through it. The mask is resampled bilinearly as a 0/1
//! image and thresholded at 0.5, so the mask transform is exactly the
//! thresholded image transform of the mask. Points that fall outside the
//! source read as zero in both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::error::{Result, SegError};
use crate::image::Image;
use crate::morphology::BinaryMask;

/// Smallest crop window, in pixels per side.
pub const MIN_CROP: usize = 8;

fn check_target(op: &'static str, target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return Err(SegError::invalid(
            op,
            format!("target size {}x{} must be positive", target.0, target.1),
        ));
    }
    Ok(())
}

/// Bilinear resize using pixel-center alignment.
pub fn resize_image(img: &Image, target: (usize, usize)) -> Result<Image> {
    check_target("resize_image", target)?;
    if img.shape() == target {
        return Ok(img.clone());
    }
    let (h, w) = img.shape();
    if h == 0 || w == 0 {
        return Err(SegError::invalid("resize_image", "source image is empty"));
    }
    let (sy, sx) = (h as f64 / target.0 as f64, w as f64 / target.1 as f64);
    Ok(Image::from_fn(target.0, target.1, |y, x| {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        bilinear(img, fy, fx)
    }))
}

/// Nearest-neighbour resize: output `(y, x)` reads input
/// `(floor(y * h / th), floor(x * w / tw))`.
pub fn resize_mask(m: &BinaryMask, target: (usize, usize)) -> Result<BinaryMask> {
    check_target("resize_mask", target)?;
    let (h, w) = m.shape();
    if h == 0 || w == 0 {
        return Err(SegError::invalid("resize_mask", "source mask is empty"));
    }
    Ok(BinaryMask::from_fn(target.0, target.1, |y, x| {
        m.get(y * h / target.0, x * w / target.1)
    }))
}

/// Resizes a sample's image bilinearly and its mask by nearest neighbour.
pub fn resize_sample(s: &Sample, target: (usize, usize)) -> Result<Sample> {
    Sample::new(
        s.id.clone(),
        resize_image(&s.image, target)?,
        resize_mask(&s.mask, target)?,
    )
}

/// Bilinear read at a point inside `[0, h-1] x [0, w-1]`.
fn bilinear(img: &Image, fy: f64, fx: f64) -> f32 {
    let (h, w) = img.shape();
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
    let top = img.get(y0, x0) as f64 * (1.0 - tx) + img.get(y0, x1) as f64 * tx;
    let bot = img.get(y1, x0) as f64 * (1.0 - tx) + img.get(y1, x1) as f64 * tx;
    (top * (1.0 - ty) + bot * ty) as f32
}

/// Bilinear read with zeros outside the grid.
fn bilinear_zero(img: &Image, fy: f64, fx: f64) -> f32 {
    let (h, w) = img.shape();
    let (y0, x0) = (fy.floor(), fx.floor());
    let (ty, tx) = (fy - y0, fx - x0);
    let at = |y: f64, x: f64| -> f64 {
        if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
            0.0
        } else {
            img.get(y as usize, x as usize) as f64
        }
    };
    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1.0) * tx;
    let bot = at(y0 + 1.0, x0) * (1.0 - tx) + at(y0 + 1.0, x0 + 1.0) * tx;
    (top * (1.0 - ty) + bot * ty) as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub rotate_max_deg: f64,
    pub zoom: bool,
    pub zoom_range: (f64, f64),
    pub crop: bool,
    pub crop_fraction: f64,
    /// Augmented copies generated per training image, on top of the original.
    pub copies: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotate: true,
            rotate_max_deg: 10.0,
            zoom: true,
            zoom_range: (0.9, 1.1),
            crop: true,
            crop_fraction: 0.9,
            copies: 3,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// No transforms and no copies.
    pub fn disabled() -> Self {
        AugmentConfig {
            rotate: false,
            zoom: false,
            crop: false,
            copies: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.zoom_range;
        let mut problems = Vec::new();
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            problems.push(format!("zoom range ({lo}, {hi}) must be positive and ordered"));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            problems.push(format!("crop fraction {} must be in (0, 1]", self.crop_fraction));
        }
        if !(self.rotate_max_deg >= 0.0 && self.rotate_max_deg.is_finite()) {
            problems.push(format!(
                "rotation bound {} must be a nonnegative angle",
                self.rotate_max_deg
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SegError::Config(problems.join("; ")))
        }
    }

    fn any_enabled(&self) -> bool {
        self.rotate || self.zoom || self.crop
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub angle_rad: f64,
    pub zoom: f64,
    /// Crop window `(top, left, height, width)` in source pixels.
    pub crop: (f64, f64, f64, f64),
}

impl Transform {
    pub fn identity(h: usize, w: usize) -> Self {
        Transform {
            angle_rad: 0.0,
            zoom: 1.0,
            crop: (0.0, 0.0, h as f64, w as f64),
        }
    }

    pub fn draw(config: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let mut t = Transform::identity(h, w);
        if config.rotate && config.rotate_max_deg > 0.0 {
            let a = config.rotate_max_deg;
            t.angle_rad = rng.random_range(-a..=a).to_radians();
        }
        if config.zoom {
            let (lo, hi) = config.zoom_range;
            t.zoom = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        if config.crop && config.crop_fraction < 1.0 {
            let side = |n: usize| ((config.crop_fraction * n as f64).round() as usize).clamp(MIN_CROP.min(n), n);
            let (ch, cw) = (side(h), side(w));
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            t.crop = (top as f64, left as f64, ch as f64, cw as f64);
        }
        t
    }

    /// Source coordinates for output pixel `(y, x)` of an `h x w` output.
    fn source(&self, h: usize, w: usize, y: usize, x: usize) -> (f64, f64) {
        let (top, left, ch, cw) = self.crop;
        let py = top + (y as f64 + 0.5) * ch / h as f64 - 0.5;
        let px = left + (x as f64 + 0.5) * cw / w as f64 - 0.5;
        if self.angle_rad == 0.0 && self.zoom == 1.0 {
            return (py, px);
        }
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (dy, dx) = ((py - cy) / self.zoom, (px - cx) / self.zoom);
        let (s, c) = self.angle_rad.sin_cos();
        (cy + c * dy - s * dx, cx + s * dy + c * dx)
    }

    pub fn apply_image(&self, img: &Image) -> Image {
        let (h, w) = img.shape();
        Image::from_fn(h, w, |y, x| {
            let (sy, sx) = self.source(h, w, y, x);
            bilinear_zero(img, sy, sx)
        })
    }

    pub fn apply_mask(&self, m: &BinaryMask) -> BinaryMask {
        let warped = self.apply_image(&Image::from_mask(m));
        let (h, w) = m.shape();
        BinaryMask::from_fn(h, w, |y, x| warped.get(y, x) >= 0.5)
    }
}

/// Applies one random draw to image and mask alike.
pub fn augment(sample: &Sample, config: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    if !config.any_enabled() {
        return sample.clone();
    }
    let (h, w) = sample.image.shape();
    let t = Transform::draw(config, h, w, rng);
    Sample {
        id: sample.id.clone(),
        image: t.apply_image(&sample.image),
        mask: t.apply_mask(&sample.mask),
    }
}

/// The random stream for copy `copy` of sample `index`; depends on nothing
/// else, so copies can be produced in any order.
pub fn augment_rng(seed: u64, index: usize, copy: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 20) | copy as u64);
    rng
}

/// `sample` resized to `target`, followed by `config.copies` augmented
/// variants (augmented at the source resolution, then resized). `index`
/// selects the random streams; augmented ids get a `#k` suffix.
pub fn expand_sample(
    sample: &Sample,
    index: usize,
    config: &AugmentConfig,
    target: (usize, usize),
) -> Result<Vec<Sample>> {
    let mut out = vec![resize_sample(sample, target)?];
    if config.any_enabled() {
        for k in 0..config.copies {
            let mut a = augment(sample, config, &mut augment_rng(config.seed, index, k));
            a.id = format!("{}#{}", sample.id, k + 1);
            out.push(resize_sample(&a, target)?);
        }
    }
    Ok(out)
}

/// [`expand_sample`] over a whole training set, in order.
pub fn expand_training_set(samples: &[Sample], config: &AugmentConfig, target: (usize, usize)) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut out = Vec::with_capacity(samples.len() * (1 + config.copies));
    for (i, s) in samples.iter().enumerate() {
        out.extend(expand_sample(s, i, config, target)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(h: usize, w: usize) -> Sample {
        let img = Image::from_fn(h, w, |y, x| ((y * 7 + x * 3) % 11) as f32 / 10.0);
        let mask = BinaryMask::from_fn(h, w, |y, x| {
            (y as f64 - 10.0).powi(2) + (x as f64 - 12.0).powi(2) < 40.0
        });
        Sample::new("s", img, mask).unwrap()
    }

    #[test]
    fn resize_identity_and_constant() {
        let s = sample(20, 24);
        assert_eq!(resize_image(&s.image, (20, 24)).unwrap(), s.image);
        assert_eq!(resize_mask(&s.mask, (20, 24)).unwrap(), s.mask);
        let c = Image::from_fn(7, 9, |_, _| 0.375);
        let r = resize_image(&c, (13, 4)).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.375).abs() < 1e-7));
        assert!(resize_image(&c, (0, 4)).is_err());
        assert!(resize_mask(&s.mask, (3, 0)).is_err());
    }

    #[test]
    fn nearest_downsample_is_top_left_subsampling() {
        let checker = BinaryMask::from_fn(4, 4, |y, x| (y + x) % 2 == 0);
        let r = resize_mask(&checker, (2, 2)).unwrap();
        let expect = BinaryMask::from_fn(2, 2, |y, x| checker.get(2 * y, 2 * x));
        assert_eq!(r, expect);
        assert!(r.bits().iter().all(|&b| b));
    }

    #[test]
    fn disabled_or_neutral_augmentation_is_identity() {
        let s = sample(20, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&s, &AugmentConfig::disabled(), &mut rng), s);
        let neutral = AugmentConfig {
            rotate_max_deg: 0.0,
            zoom_range: (1.0, 1.0),
            crop_fraction: 1.0,
            ..Default::default()
        };
        assert_eq!(augment(&s, &neutral, &mut rng), s);
    }

    #[test]
    fn augmentation_is_seeded_and_consistent() {
        let s = sample(32, 32);
        let cfg = AugmentConfig::default();
        for k in 0..20 {
            let a = augment(&s, &cfg, &mut augment_rng(5, k, 0));
            let b = augment(&s, &cfg, &mut augment_rng(5, k, 0));
            assert_eq!(a, b);
            assert_eq!(a.image.shape(), a.mask.shape());
            // the mask follows the same geometry as the image
            let t = Transform::draw(&cfg, 32, 32, &mut augment_rng(5, k, 0));
            let warped = t.apply_image(&Image::from_mask(&s.mask));
            assert_eq!(a.mask, BinaryMask::from_fn(32, 32, |y, x| warped.get(y, x) >= 0.5));
            assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let a = augment(&s, &cfg, &mut augment_rng(5, 0, 0));
        let b = augment(&s, &cfg, &mut augment_rng(5, 0, 1));
        assert_ne!(a, b);
    }

    #[test]
    fn tiny_images_clamp_the_crop() {
        let s = sample(10, 9);
        let cfg = AugmentConfig {
            crop_fraction: 0.1,
            ..Default::default()
        };
        let t = Transform::draw(&cfg, 10, 9, &mut augment_rng(0, 0, 0));
        assert_eq!((t.crop.2, t.crop.3), (8.0, 8.0));
        let a = augment(&s, &cfg, &mut augment_rng(0, 0, 0));
        assert_eq!(a.mask.shape(), (10, 9));
    }

    #[test]
    fn expansion_counts_and_sizes() {
        let s = vec![sample(20, 24), sample(20, 24)];
        let out = expand_training_set(&s, &AugmentConfig::default(), (16, 16)).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out
            .iter()
            .all(|x| x.image.shape() == (16, 16) && x.mask.shape() == (16, 16)));
        assert_eq!(out[1].id, "s#1");
        assert_eq!(out[4].id, "s");
        let plain = expand_training_set(&s, &AugmentConfig::disabled(), (16, 16)).unwrap();
        assert_eq!(plain.len(), 2);
    }
}
