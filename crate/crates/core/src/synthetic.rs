//! Synthetic benchmark: an ellipse and a rectangle on a noisy background,
//! with label-flipped pseudo-labels and weak annotations derived from the
//! ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::annotations::{synthesize_weak_labels, AnnotationSet};
use crate::constraints::{BoundingBox, EllipseRegion, SuperpixelMap};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, ProbField, Shape};
use crate::io::Image;
use crate::superpixels::{slic, SlicConfig};

pub const BACKGROUND: usize = 0;
pub const ELLIPSE: usize = 1;
pub const RECTANGLE: usize = 2;

pub fn class_names() -> Vec<String> {
    ["background", "ellipse", "rectangle"].iter().map(|s| s.to_string()).collect()
}

/// Independent RNG stream `index` of `name` under `seed`. Streams never
/// share state, so drawing from one does not shift any other.
pub fn stream_rng(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    // FNV-1a over the stream name, then mixed with the index
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    /// Probability that a pixel's pseudo-label is replaced by another class.
    pub flip_probability: f64,
    /// Probability the pseudo-label field assigns to the (possibly flipped)
    /// label; the rest is split evenly over the other classes.
    pub confidence: f64,
    pub pixel_noise: f64,
    pub points_per_class: usize,
    pub slic: SlicConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            flip_probability: 0.3,
            confidence: 0.6,
            pixel_noise: 0.05,
            points_per_class: 3,
            slic: SlicConfig::for_area(64, 64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: Image,
    pub gt: LabelMap,
    /// Label-flipped ground truth the pseudo-label field was built from.
    pub noisy: LabelMap,
    pub init: ProbField,
    pub annotations: AnnotationSet,
    pub superpixels: SuperpixelMap,
    pub ellipse_box: BoundingBox,
    pub rectangle_box: BoundingBox,
}

fn boxes_apart(a: &BoundingBox, b: &BoundingBox, margin: usize) -> bool {
    a.i2 + margin < b.i1 || b.i2 + margin < a.i1 || a.j2 + margin < b.j1 || b.j2 + margin < a.j1
}

/// Places an ellipse box with odd side lengths (so the inscribed ellipse
/// reaches all four box edges) and a disjoint rectangle.
fn place_objects(h: usize, w: usize, rng: &mut impl Rng) -> Result<(BoundingBox, BoundingBox)> {
    if h < 24 || w < 24 {
        return Err(Error::invalid(format!("synthetic images need at least 24x24 pixels, got {h}x{w}")));
    }
    let max_r = (h.min(w) / 6).max(3);
    let max_side = (h.min(w) / 3).max(6);
    for _ in 0..1000 {
        let (ri, rj) = (rng.gen_range(3..=max_r), rng.gen_range(3..=max_r));
        let ci = rng.gen_range(ri + 1..h - ri - 1);
        let cj = rng.gen_range(rj + 1..w - rj - 1);
        let ellipse = BoundingBox::new(ci - ri, cj - rj, ci + ri, cj + rj, ELLIPSE)?;
        let (sh, sw) = (rng.gen_range(6..=max_side), rng.gen_range(6..=max_side));
        let i1 = rng.gen_range(1..h - sh);
        let j1 = rng.gen_range(1..w - sw);
        let rect = BoundingBox::new(i1, j1, i1 + sh - 1, j1 + sw - 1, RECTANGLE)?;
        if boxes_apart(&ellipse, &rect, 2) {
            return Ok((ellipse, rect));
        }
    }
    Err(Error::invalid("could not place disjoint objects"))
}

fn render_gt(h: usize, w: usize, ellipse: &EllipseRegion, rect: &BoundingBox) -> Result<LabelMap> {
    LabelMap::from_fn(h, w, |i, j| {
        if rect.contains(i, j) {
            RECTANGLE as u8
        } else if ellipse.bbox.contains(i, j) && !ellipse.is_outside(i, j) {
            ELLIPSE as u8
        } else {
            BACKGROUND as u8
        }
    })
}

fn render_image(gt: &LabelMap, noise: f64, rng: &mut impl Rng) -> Result<Image> {
    // one random color per class, kept apart so the objects stay visible
    let mut palette: Vec<[f64; 3]> = Vec::with_capacity(3);
    while palette.len() < 3 {
        let c = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
        let far = palette.iter().all(|p| p.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() > 0.15);
        if far {
            palette.push(c);
        }
    }
    let normal = Normal::new(0.0, noise).map_err(|e| Error::invalid(format!("pixel noise: {e}")))?;
    let mut data = Vec::with_capacity(gt.height() * gt.width() * 3);
    for &l in gt.as_slice() {
        for v in palette[l as usize] {
            data.push((v + normal.sample(rng)).clamp(0.0, 1.0));
        }
    }
    Image::new(gt.height(), gt.width(), 3, data)
}

/// Replaces each label with a uniformly chosen other class with probability
/// `p`.
pub fn flip_labels(gt: &LabelMap, classes: usize, p: f64, rng: &mut impl Rng) -> LabelMap {
    let mut out = gt.clone();
    for l in out.as_mut_slice() {
        if rng.gen_bool(p) {
            let other = rng.gen_range(0..classes - 1) as u8;
            *l = if other >= *l { other + 1 } else { other };
        }
    }
    out
}

/// Soft field putting `confidence` on each pixel's label.
pub fn soft_field(labels: &LabelMap, classes: usize, confidence: f64) -> Result<ProbField> {
    let rest = (1.0 - confidence) / (classes - 1) as f64;
    let mut data = Vec::with_capacity(labels.as_slice().len() * classes);
    for &l in labels.as_slice() {
        data.extend((0..classes).map(|c| if c == l as usize { confidence } else { rest }));
    }
    ProbField::new(Shape::new(labels.height(), labels.width(), classes), data)
}

/// Sample `index` of the benchmark generated from `seed`.
pub fn generate(cfg: &SyntheticConfig, seed: u64, index: u64) -> Result<SyntheticSample> {
    if !(0.0..1.0).contains(&cfg.flip_probability) || !(cfg.confidence > 1.0 / 3.0 && cfg.confidence < 1.0) {
        return Err(Error::invalid("flip probability must be in [0, 1) and confidence in (1/3, 1)"));
    }
    let (h, w) = (cfg.height, cfg.width);
    let (ellipse_box, rectangle_box) = place_objects(h, w, &mut stream_rng(seed, "layout", index))?;
    let ellipse = EllipseRegion::inscribed(ellipse_box)?;
    let gt = render_gt(h, w, &ellipse, &rectangle_box)?;
    let image = render_image(&gt, cfg.pixel_noise, &mut stream_rng(seed, "image", index))?;
    let noisy = flip_labels(&gt, 3, cfg.flip_probability, &mut stream_rng(seed, "flip", index));
    let init = soft_field(&noisy, 3, cfg.confidence)?;
    let (annotations, _) = synthesize_weak_labels(
        &gt,
        &class_names(),
        BACKGROUND,
        cfg.points_per_class,
        None,
        &mut stream_rng(seed, "weak", index),
    )?;
    let superpixels = slic(&image, &cfg.slic)?;
    Ok(SyntheticSample { image, gt, noisy, init, annotations, superpixels, ellipse_box, rectangle_box })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::derive_boxes_from_gt;
    use crate::constraints::build_corners;
    use crate::formula::eval_discrete;

    #[test]
    fn objects_match_derived_boxes() {
        let cfg = SyntheticConfig::default();
        for index in 0..20 {
            let s = generate(&cfg, 7, index).unwrap();
            let boxes = derive_boxes_from_gt(&s.gt, BACKGROUND);
            assert_eq!(boxes, vec![s.ellipse_box, s.rectangle_box]);
            assert!(eval_discrete(&build_corners(&s.ellipse_box).unwrap(), &s.gt));
            assert_eq!(s.annotations.boxes, boxes);
        }
    }

    #[test]
    fn flip_rate_and_determinism() {
        let gt = LabelMap::filled(100, 100, 1).unwrap();
        let noisy = flip_labels(&gt, 3, 0.3, &mut stream_rng(1, "flip", 0));
        let flipped = noisy.as_slice().iter().filter(|&&l| l != 1).count() as f64 / 10_000.0;
        assert!((flipped - 0.3).abs() < 0.02, "{flipped}");
        assert_eq!(noisy, flip_labels(&gt, 3, 0.3, &mut stream_rng(1, "flip", 0)));
        assert_ne!(noisy, flip_labels(&gt, 3, 0.3, &mut stream_rng(1, "flip", 1)));
    }

    #[test]
    fn streams_are_independent() {
        let a: u64 = stream_rng(3, "image", 0).gen();
        let b: u64 = stream_rng(3, "flip", 0).gen();
        let c: u64 = stream_rng(3, "image", 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
