//! Random tiny instances (fields, label maps, formulas) for checking the
//! fuzzy engine against the exact oracle.

use fuzzyseg::constraints::*;
use fuzzyseg::formula::{Family, Formula};
use fuzzyseg::grid::{LabelMap, LogitField, ProbField, Shape};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn random_probs(shape: Shape, rng: &mut impl Rng) -> ProbField {
    let mut data = Vec::with_capacity(shape.len());
    for _ in 0..shape.pixels() {
        let raw: Vec<f64> = (0..shape.classes).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / total));
    }
    ProbField::new(shape, data).unwrap()
}

pub fn random_logits(shape: Shape, bound: f64, rng: &mut impl Rng) -> LogitField {
    LogitField::new(shape, (0..shape.len()).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap()
}

pub fn random_map(h: usize, w: usize, classes: usize, rng: &mut impl Rng) -> LabelMap {
    LabelMap::from_fn(h, w, |_, _| rng.gen_range(0..classes) as u8).unwrap()
}

/// Every label map of an `h`x`w` grid, first pixel most significant.
pub fn all_maps(h: usize, w: usize, classes: usize) -> impl Iterator<Item = LabelMap> {
    let n = h * w;
    (0..classes.pow(n as u32)).map(move |mut code| {
        let mut labels = vec![0u8; n];
        for p in (0..n).rev() {
            labels[p] = (code % classes) as u8;
            code /= classes;
        }
        LabelMap::new(h, w, labels).unwrap()
    })
}

pub fn random_box(h: usize, w: usize, classes: usize, thick: bool, rng: &mut impl Rng) -> BoundingBox {
    let extra = usize::from(thick);
    let i1 = rng.gen_range(0..h - extra);
    let j1 = rng.gen_range(0..w - extra);
    let i2 = rng.gen_range(i1 + extra..h);
    let j2 = rng.gen_range(j1 + extra..w);
    BoundingBox::new(i1, j1, i2, j2, rng.gen_range(1..classes)).unwrap()
}

pub fn random_superpixels(h: usize, w: usize, rng: &mut impl Rng) -> SuperpixelMap {
    let k = rng.gen_range(1..=3u32);
    let raw: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..k)).collect();
    SuperpixelMap::from_raw(h, w, &raw).unwrap()
}

/// A random instance of `family` on an `h`x`w` grid with `classes >= 2`.
/// Corners need `h, w >= 2`; neighborhood and fill need two pixels.
pub fn random_formula(family: Family, h: usize, w: usize, classes: usize, rng: &mut impl Rng) -> Formula {
    match family {
        Family::Fs => build_full_supervision(&random_map(h, w, classes, rng), classes).unwrap(),
        Family::Scribbles => {
            // disjoint scribbles over a shuffled subset of the pixels
            let mut pixels: Vec<(usize, usize)> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
            pixels.shuffle(rng);
            pixels.truncate(rng.gen_range(1..=h * w));
            let n = rng.gen_range(1..=pixels.len().min(3));
            let chunk = pixels.len().div_ceil(n);
            let scribbles: Vec<Scribble> =
                pixels.chunks(chunk).map(|c| Scribble::new(c.to_vec(), rng.gen_range(0..classes)).unwrap()).collect();
            build_scribbles(&scribbles)
        }
        Family::BboxShallow => build_bboxes_shallow(&[random_box(h, w, classes, false, rng)]),
        Family::Bbox => build_bboxes_tight(&[random_box(h, w, classes, false, rng)]),
        Family::Background => {
            let n = rng.gen_range(0..=2);
            let boxes: Vec<_> = (0..n).map(|_| random_box(h, w, classes, false, rng)).collect();
            build_background(&boxes, 0, h, w)
        }
        Family::Neighborhood => build_neighborhood(h, w).unwrap(),
        Family::Fill => build_fill(h, w),
        Family::Borders => build_borders(&random_superpixels(h, w, rng)),
        Family::Corners => build_corners(&random_box(h, w, classes, true, rng)).unwrap(),
    }
}

/// Random grid size for `family`, at most `max`x`max`.
pub fn random_dims(family: Family, max: usize, rng: &mut impl Rng) -> (usize, usize) {
    loop {
        let (h, w) = (rng.gen_range(1..=max), rng.gen_range(1..=max));
        let ok = match family {
            Family::Corners => h >= 2 && w >= 2,
            Family::Neighborhood | Family::Fill => h * w >= 2,
            _ => true,
        };
        if ok {
            return (h, w);
        }
    }
}
