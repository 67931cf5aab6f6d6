//! Binarization and binary morphology for cleaning up predicted masks.
//!
//! Pixels outside the image are background for both dilation and erosion,
//! so erosion eats into regions that touch the border. Connectivity is
//! 8-neighbour throughout.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SegError};
use crate::image::Image;

/// Dense `h x w` boolean grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(SegError::invalid(
                "BinaryMask::from_bits",
                format!("{} bits for a {height}x{width} mask", bits.len()),
            ));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        BinaryMask { height, width, bits }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Bounds-checked read; anything outside the image is background.
    pub fn get_or_background(&self, y: isize, x: isize) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width && self.get(y as usize, x as usize)
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_same(&self, other: &BinaryMask, op: &'static str) -> Result<()> {
        if self.height != other.height {
            return Err(SegError::shape(op, "height", other.height, self.height));
        }
        if self.width != other.width {
            return Err(SegError::shape(op, "width", other.width, self.width));
        }
        Ok(())
    }

    fn zip(&self, other: &BinaryMask, op: &'static str, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.check_same(other, op)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, "union", |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, "intersection", |a, b| a && b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, "difference", |a, b| a && !b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// `self ⊆ other`. Masks of different shapes are never subsets.
    pub fn is_subset(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Coordinates of all foreground pixels in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.height, self.width)?;
        for row in self.bits.chunks(self.width.max(1)) {
            let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// Odd-sized boolean template with its origin at the center cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StructuringElement {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::square(3)
    }
}

impl StructuringElement {
    /// Full `size x size` square. `size` must be odd.
    pub fn square(size: usize) -> Self {
        Self::from_bits(size, size, vec![true; size * size]).expect("odd square")
    }

    /// Plus-shaped element with arms of length `size / 2`.
    pub fn cross(size: usize) -> Self {
        let c = size / 2;
        let bits = (0..size * size).map(|i| i / size == c || i % size == c).collect();
        Self::from_bits(size, size, bits).expect("odd cross")
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        let op = "StructuringElement";
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(SegError::invalid(
                op,
                format!("sides must be odd, got {height}x{width}"),
            ));
        }
        if bits.len() != height * width {
            return Err(SegError::invalid(op, "bit count does not match size"));
        }
        if !bits[(height / 2) * width + width / 2] {
            return Err(SegError::invalid(op, "origin cell must be set"));
        }
        Ok(StructuringElement { height, width, bits })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `(dy, dx)` of every set cell relative to the origin.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let (cy, cx) = ((self.height / 2) as isize, (self.width / 2) as isize);
        (0..self.height * self.width)
            .filter(|&i| self.bits[i])
            .map(|i| ((i / self.width) as isize - cy, (i % self.width) as isize - cx))
            .collect()
    }

    /// Point reflection through the origin.
    pub fn reflect(&self) -> Self {
        StructuringElement {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().rev().copied().collect(),
        }
    }
}

/// `⋃_{b ∈ se} (m + b)`, applied `iterations` times.
pub fn dilate(m: &BinaryMask, se: &StructuringElement, iterations: usize) -> BinaryMask {
    let offsets = se.offsets();
    let mut cur = m.clone();
    for _ in 0..iterations {
        let mut out = BinaryMask::new(m.height, m.width);
        for (y, x) in cur.foreground() {
            for &(dy, dx) in &offsets {
                let (ty, tx) = (y as isize + dy, x as isize + dx);
                if ty >= 0 && tx >= 0 && (ty as usize) < m.height && (tx as usize) < m.width {
                    out.set(ty as usize, tx as usize, true);
                }
            }
        }
        cur = out;
    }
    cur
}

/// `{p : p + b ∈ m for all b ∈ se}`, applied `iterations` times.
pub fn erode(m: &BinaryMask, se: &StructuringElement, iterations: usize) -> BinaryMask {
    let offsets = se.offsets();
    let mut cur = m.clone();
    for _ in 0..iterations {
        let out = BinaryMask::from_fn(m.height, m.width, |y, x| {
            cur.get(y, x)
                && offsets
                    .iter()
                    .all(|&(dy, dx)| cur.get_or_background(y as isize + dy, x as isize + dx))
        });
        cur = out;
    }
    cur
}

/// Erosion followed by dilation.
pub fn open(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    open_n(m, se, 1)
}

/// Dilation followed by erosion.
pub fn close(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    close_n(m, se, 1)
}

pub fn open_n(m: &BinaryMask, se: &StructuringElement, iterations: usize) -> BinaryMask {
    dilate(&erode(m, se, iterations), se, iterations)
}

pub fn close_n(m: &BinaryMask, se: &StructuringElement, iterations: usize) -> BinaryMask {
    erode(&dilate(m, se, iterations), se, iterations)
}

/// One-pixel inner boundary: `m \ erode(m, 3x3)`.
pub fn boundary(m: &BinaryMask) -> BinaryMask {
    m.difference(&erode(m, &StructuringElement::square(3), 1))
        .expect("same shape")
}

/// Pixels with probability at or above `threshold`.
pub fn binarize(prob: &Image, threshold: f64) -> BinaryMask {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    let t = threshold as f32;
    BinaryMask {
        height: prob.height(),
        width: prob.width(),
        bits: prob.data().iter().map(|&p| p >= t).collect(),
    }
}

/// 8-connected component labelling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Per pixel: 0 for background, otherwise the 1-based component label.
    pub labels: Vec<u32>,
    /// `sizes[l - 1]` is the pixel count of label `l`.
    pub sizes: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl Components {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

/// Labels are ordered by decreasing size; ties go to the component whose
/// first pixel comes first in row-major order.
pub fn connected_components(m: &BinaryMask) -> Components {
    let (h, w) = m.shape();
    let mut raw = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !m.bits[start] || raw[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        raw[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if m.get_or_background(ny, nx) {
                        let j = ny as usize * w + nx as usize;
                        if raw[j] == 0 {
                            raw[j] = label;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    // Discovery order is already row-major by first pixel, so a stable sort
    // on size alone gives the required tie-break.
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut relabel = vec![0u32; sizes.len() + 1];
    for (new, &old) in order.iter().enumerate() {
        relabel[old + 1] = new as u32 + 1;
    }
    Components {
        labels: raw.into_iter().map(|l| relabel[l as usize]).collect(),
        sizes: order.iter().map(|&i| sizes[i]).collect(),
        height: h,
        width: w,
    }
}

/// Keeps the `k` largest components. Masks with at most `k` components come
/// back unchanged.
pub fn keep_largest(m: &BinaryMask, k: usize) -> Result<BinaryMask> {
    if k == 0 {
        return Err(SegError::invalid("keep_largest", "k must be at least 1"));
    }
    let cc = connected_components(m);
    if cc.len() <= k {
        return Ok(m.clone());
    }
    Ok(BinaryMask {
        height: m.height,
        width: m.width,
        bits: cc.labels.iter().map(|&l| l != 0 && l as usize <= k).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphKind {
    Dilate,
    Erode,
    Open,
    Close,
}

impl fmt::Display for MorphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MorphKind::Dilate => "dilate",
            MorphKind::Erode => "erode",
            MorphKind::Open => "open",
            MorphKind::Close => "close",
        })
    }
}

impl FromStr for MorphKind {
    type Err = SegError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dilate" => Ok(MorphKind::Dilate),
            "erode" => Ok(MorphKind::Erode),
            "open" => Ok(MorphKind::Open),
            "close" => Ok(MorphKind::Close),
            other => Err(SegError::Config(format!("unknown morphology op {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MorphStep {
    pub kind: MorphKind,
    pub se: StructuringElement,
    pub iterations: usize,
}

impl MorphStep {
    pub fn new(kind: MorphKind, se: StructuringElement, iterations: usize) -> Self {
        MorphStep { kind, se, iterations }
    }

    pub fn apply(&self, m: &BinaryMask) -> BinaryMask {
        match self.kind {
            MorphKind::Dilate => dilate(m, &self.se, self.iterations),
            MorphKind::Erode => erode(m, &self.se, self.iterations),
            MorphKind::Open => open_n(m, &self.se, self.iterations),
            MorphKind::Close => close_n(m, &self.se, self.iterations),
        }
    }
}

/// Parses `op:iterations[:se_size]` items separated by commas, e.g.
/// `open:1,close:1:5`. The element is a square; size defaults to 3.
pub fn parse_pipeline(spec: &str) -> Result<Vec<MorphStep>> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "none" {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let bad = || SegError::Config(format!("bad pipeline step {item:?}; expected op[:iterations[:size]]"));
            if parts.is_empty() || parts.len() > 3 {
                return Err(bad());
            }
            let kind = parts[0].parse()?;
            let iterations = parts.get(1).map_or(Ok(1), |s| s.parse().map_err(|_| bad()))?;
            let size: usize = parts.get(2).map_or(Ok(3), |s| s.parse().map_err(|_| bad()))?;
            if size.is_multiple_of(2) {
                return Err(SegError::Config(format!(
                    "structuring element size must be odd in {item:?}"
                )));
            }
            Ok(MorphStep::new(kind, StructuringElement::square(size), iterations))
        })
        .collect()
}

/// Renders a pipeline back into [`parse_pipeline`] syntax. Non-square
/// elements are written with their height.
pub fn format_pipeline(steps: &[MorphStep]) -> String {
    if steps.is_empty() {
        return "none".to_string();
    }
    steps
        .iter()
        .map(|s| format!("{}:{}:{}", s.kind, s.iterations, s.se.size().0))
        .collect::<Vec<_>>()
        .join(",")
}

/// Threshold, morphology pipeline and component filter applied to a
/// probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessConfig {
    pub threshold: f64,
    pub pipeline: Vec<MorphStep>,
    /// Components to keep; 0 disables the filter.
    pub keep_largest: usize,
}

/// Threshold 0.5, one 3x3 closing, keep the two largest components.
///
/// Opening is left out: on masks whose tips are narrower than the element
/// it removes true foreground, and [`keep_largest`] already drops specks.
/// [`PostprocessConfig::open_close`] restores it.
impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            threshold: 0.5,
            pipeline: vec![MorphStep::new(MorphKind::Close, StructuringElement::square(3), 1)],
            keep_largest: 2,
        }
    }
}

impl PostprocessConfig {
    /// 3x3 opening then 3x3 closing, keep the two largest components.
    pub fn open_close() -> Self {
        PostprocessConfig {
            pipeline: vec![
                MorphStep::new(MorphKind::Open, StructuringElement::square(3), 1),
                MorphStep::new(MorphKind::Close, StructuringElement::square(3), 1),
            ],
            ..Default::default()
        }
    }

    /// Thresholding only.
    pub fn raw(threshold: f64) -> Self {
        PostprocessConfig {
            threshold,
            pipeline: Vec::new(),
            keep_largest: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(SegError::Config(format!(
                "threshold {} is outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// binarize, then the pipeline in order, then [`keep_largest`].
pub fn postprocess(prob: &Image, config: &PostprocessConfig) -> Result<BinaryMask> {
    config.validate()?;
    let mut m = binarize(prob, config.threshold);
    for step in &config.pipeline {
        m = step.apply(&m);
    }
    if config.keep_largest > 0 {
        m = keep_largest(&m, config.keep_largest)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(h: usize, w: usize, y0: usize, x0: usize, size: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| {
            (y0..y0 + size).contains(&y) && (x0..x0 + size).contains(&x)
        })
    }

    #[test]
    fn binarize_uses_greater_or_equal() {
        let img = Image::from_vec(1, 4, vec![0.4, 0.6, 0.5, 0.9]).unwrap();
        assert_eq!(binarize(&img, 0.5).bits(), &[false, true, true, true]);
        let hi = Image::from_vec(2, 2, vec![0.9; 4]).unwrap();
        assert_eq!(binarize(&hi, 0.5).count(), 4);
    }

    #[test]
    fn dilate_and_erode_a_point_and_block() {
        let se = StructuringElement::square(3);
        let dot = block(7, 7, 3, 3, 1);
        assert_eq!(dilate(&dot, &se, 1), block(7, 7, 2, 2, 3));
        assert_eq!(erode(&block(7, 7, 2, 2, 3), &se, 1), dot);
        assert_eq!(dilate(&dot, &se, 2), block(7, 7, 1, 1, 5));
    }

    #[test]
    fn erosion_treats_outside_as_background() {
        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        let e = erode(&full, &StructuringElement::square(3), 1);
        assert_eq!(e, block(4, 4, 1, 1, 2));
    }

    #[test]
    fn open_removes_specks_and_close_fills_holes() {
        let se = StructuringElement::square(3);
        let mut m = block(12, 12, 1, 1, 5);
        m.set(10, 10, true);
        assert_eq!(open(&m, &se), block(12, 12, 1, 1, 5));

        let mut holed = block(9, 9, 2, 2, 5);
        holed.set(4, 4, false);
        assert_eq!(close(&holed, &se), block(9, 9, 2, 2, 5));
    }

    #[test]
    fn components_sorted_by_size_then_position() {
        let mut m = block(10, 10, 6, 6, 2); // size 4, appears later
        for (y, x) in block(10, 10, 0, 0, 3).foreground() {
            m.set(y, x, true); // size 9
        }
        let cc = connected_components(&m);
        assert_eq!(cc.sizes, vec![9, 4]);
        assert_eq!(cc.label(0, 0), 1);
        assert_eq!(cc.label(7, 7), 2);

        let diag = BinaryMask::from_fn(3, 3, |y, x| y == x);
        assert_eq!(connected_components(&diag).sizes, vec![3]);
        assert!(connected_components(&BinaryMask::new(4, 4)).is_empty());

        // equal sizes: first in row-major order wins
        let two = BinaryMask::from_fn(3, 5, |y, x| (y == 2 && x == 0) || (y == 0 && x == 4));
        let cc = connected_components(&two);
        assert_eq!(cc.label(0, 4), 1);
        assert_eq!(cc.label(2, 0), 2);
    }

    #[test]
    fn keep_largest_drops_small_components() {
        let mut m = BinaryMask::new(12, 12);
        for (y, x) in (0..10).map(|i| (0, i)).chain((0..5).map(|i| (4, i))).chain([(8, 8)]) {
            m.set(y, x, true);
        }
        let kept = keep_largest(&m, 2).unwrap();
        assert_eq!(kept.count(), 15);
        assert!(!kept.get(8, 8));

        let single = block(6, 6, 1, 1, 3);
        assert_eq!(keep_largest(&single, 2).unwrap(), single);
        assert!(keep_largest(&single, 0).is_err());
    }

    #[test]
    fn pipeline_syntax_roundtrips() {
        let steps = parse_pipeline("open:1,close:2:5, dilate").unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(
            steps[1],
            MorphStep::new(MorphKind::Close, StructuringElement::square(5), 2)
        );
        assert_eq!(parse_pipeline(&format_pipeline(&steps)).unwrap(), steps);
        assert!(parse_pipeline("none").unwrap().is_empty());
        assert!(parse_pipeline("smooth:1").is_err());
        assert!(parse_pipeline("open:1:4").is_err());
    }

    #[test]
    fn postprocess_on_clean_blobs_is_plain_threshold() {
        let m = block(16, 16, 2, 2, 5).union(&block(16, 16, 9, 9, 5)).unwrap();
        let prob = Image::from_fn(16, 16, |y, x| if m.get(y, x) { 0.8 } else { 0.1 });
        assert_eq!(postprocess(&prob, &PostprocessConfig::default()).unwrap(), m);
        assert_eq!(postprocess(&prob, &PostprocessConfig::open_close()).unwrap(), m);
        let empty_pipeline = PostprocessConfig {
            pipeline: vec![],
            ..Default::default()
        };
        assert_eq!(postprocess(&prob, &empty_pipeline).unwrap(), m);
        assert!(postprocess(&prob, &PostprocessConfig::raw(1.0)).is_err());
    }

    #[test]
    fn default_postprocess_removes_specks_and_holes() {
        let clean = block(20, 20, 2, 2, 6).union(&block(20, 20, 11, 11, 6)).unwrap();
        let mut noisy = clean.clone();
        noisy.set(4, 4, false);
        noisy.set(14, 13, false);
        noisy.set(18, 1, true);
        noisy.set(1, 18, true);
        let prob = Image::from_fn(20, 20, |y, x| if noisy.get(y, x) { 0.9 } else { 0.2 });
        assert_eq!(postprocess(&prob, &PostprocessConfig::default()).unwrap(), clean);
    }

    #[test]
    fn structuring_element_validation() {
        assert!(StructuringElement::from_bits(2, 3, vec![true; 6]).is_err());
        let no_origin = vec![true, true, true, true, false, true, true, true, true];
        assert!(StructuringElement::from_bits(3, 3, no_origin).is_err());
        let asym = StructuringElement::from_bits(1, 3, vec![true, true, false]).unwrap();
        assert_eq!(asym.reflect().offsets(), vec![(0, 0), (0, 1)]);
        assert_eq!(StructuringElement::cross(3).offsets().len(), 5);
    }
}
