//! Weak annotations: reading them from JSON and synthesizing them from dense
//! ground truth.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{BoundingBox, Scribble};
use crate::error::{Error, Result};
use crate::grid::LabelMap;

/// A single clicked pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub i: usize,
    pub j: usize,
    pub class: usize,
}

/// All weak supervision for one image, with classes as indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub classes: Vec<String>,
    pub background: usize,
    pub scribbles: Vec<Scribble>,
    pub boxes: Vec<BoundingBox>,
    pub points: Vec<Point>,
}

impl AnnotationSet {
    /// Scribbles followed by every point promoted to a one-pixel scribble.
    pub fn all_scribbles(&self) -> Vec<Scribble> {
        let mut out = self.scribbles.clone();
        out.extend(self.points.iter().map(|p| Scribble::point(p.i, p.j, p.class)));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let name = |c: usize| self.classes[c].clone();
        let file = AnnotationFile {
            classes: self.classes.clone(),
            background: name(self.background),
            boxes: self
                .boxes
                .iter()
                .map(|b| RawBox {
                    class: name(b.class),
                    i1: b.i1 as i64,
                    j1: b.j1 as i64,
                    i2: b.i2 as i64,
                    j2: b.j2 as i64,
                })
                .collect(),
            scribbles: self
                .scribbles
                .iter()
                .map(|s| RawScribble {
                    class: name(s.class()),
                    pixels: s.pixels().iter().map(|&(i, j)| [i as i64, j as i64]).collect(),
                })
                .collect(),
            points: self
                .points
                .iter()
                .map(|p| RawPoint { class: name(p.class), i: p.i as i64, j: p.j as i64 })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    classes: Vec<String>,
    background: String,
    #[serde(default)]
    boxes: Vec<RawBox>,
    #[serde(default)]
    scribbles: Vec<RawScribble>,
    #[serde(default)]
    points: Vec<RawPoint>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    class: String,
    i1: i64,
    j1: i64,
    i2: i64,
    j2: i64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScribble {
    class: String,
    pixels: Vec<[i64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    class: String,
    i: i64,
    j: i64,
}

struct Validator<'a> {
    path: &'a Path,
    height: usize,
    width: usize,
    palette: &'a [String],
}

impl Validator<'_> {
    fn class(&self, field: &str, name: &str) -> Result<usize> {
        self.palette
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::parse(self.path, format!("{field}: unknown class `{name}`")))
    }

    fn coord(&self, field: &str, value: i64, limit: usize) -> Result<usize> {
        if value < 0 || value as usize >= limit {
            return Err(Error::parse(self.path, format!("{field}: coordinate {value} outside [0, {limit})")));
        }
        Ok(value as usize)
    }

    fn row(&self, field: &str, v: i64) -> Result<usize> {
        self.coord(field, v, self.height)
    }

    fn col(&self, field: &str, v: i64) -> Result<usize> {
        self.coord(field, v, self.width)
    }
}

/// Parses annotation JSON for an `height`x`width` image. Class names map to
/// indices through `palette`, or through the file's own `classes` list when
/// no palette is given.
pub fn parse_annotations(
    text: &str,
    path: &Path,
    height: usize,
    width: usize,
    palette: Option<&[String]>,
) -> Result<AnnotationSet> {
    let file: AnnotationFile = serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    let palette = palette.unwrap_or(&file.classes);
    let v = Validator { path, height, width, palette };
    for (k, name) in file.classes.iter().enumerate() {
        v.class(&format!("classes[{k}]"), name)?;
    }
    let background = v.class("background", &file.background)?;
    let mut boxes = Vec::with_capacity(file.boxes.len());
    for (k, b) in file.boxes.iter().enumerate() {
        let f = |name: &str| format!("boxes[{k}].{name}");
        let (i1, j1) = (v.row(&f("i1"), b.i1)?, v.col(&f("j1"), b.j1)?);
        let (i2, j2) = (v.row(&f("i2"), b.i2)?, v.col(&f("j2"), b.j2)?);
        let class = v.class(&f("class"), &b.class)?;
        boxes
            .push(BoundingBox::new(i1, j1, i2, j2, class).map_err(|e| Error::parse(path, format!("boxes[{k}]: {e}")))?);
    }
    let mut scribbles = Vec::with_capacity(file.scribbles.len());
    for (k, s) in file.scribbles.iter().enumerate() {
        let class = v.class(&format!("scribbles[{k}].class"), &s.class)?;
        let pixels = s
            .pixels
            .iter()
            .enumerate()
            .map(|(n, &[i, j])| {
                let f = format!("scribbles[{k}].pixels[{n}]");
                Ok((v.row(&f, i)?, v.col(&f, j)?))
            })
            .collect::<Result<Vec<_>>>()?;
        scribbles.push(Scribble::new(pixels, class).map_err(|e| Error::parse(path, format!("scribbles[{k}]: {e}")))?);
    }
    let mut points = Vec::with_capacity(file.points.len());
    for (k, p) in file.points.iter().enumerate() {
        points.push(Point {
            i: v.row(&format!("points[{k}].i"), p.i)?,
            j: v.col(&format!("points[{k}].j"), p.j)?,
            class: v.class(&format!("points[{k}].class"), &p.class)?,
        });
    }
    Ok(AnnotationSet { classes: palette.to_vec(), background, scribbles, boxes, points })
}

pub fn load_annotations(path: &Path, height: usize, width: usize, palette: Option<&[String]>) -> Result<AnnotationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path, height, width, palette)
}

/// One tight box per non-background class present in `gt`.
pub fn derive_boxes_from_gt(gt: &LabelMap, background: usize) -> Vec<BoundingBox> {
    let classes = gt.max_label() + 1;
    let mut extents: Vec<Option<(usize, usize, usize, usize)>> = vec![None; classes];
    for i in 0..gt.height() {
        for j in 0..gt.width() {
            let e = &mut extents[gt.get(i, j)];
            *e = Some(match *e {
                None => (i, j, i, j),
                Some((i1, j1, i2, j2)) => (i1.min(i), j1.min(j), i2.max(i), j2.max(j)),
            });
        }
    }
    extents
        .into_iter()
        .enumerate()
        .filter(|&(c, _)| c != background)
        .filter_map(|(c, e)| e.map(|(i1, j1, i2, j2)| BoundingBox { i1, j1, i2, j2, class: c }))
        .collect()
}

/// `k` distinct pixels of every class present (background included), or all
/// of a class's pixels when it has fewer than `k`. Ordered by class, then by
/// sampling order.
pub fn sample_points_from_gt(gt: &LabelMap, k: usize, rng: &mut impl Rng) -> Vec<Point> {
    let classes = gt.max_label() + 1;
    let mut by_class: Vec<Vec<(usize, usize)>> = vec![Vec::new(); classes];
    for i in 0..gt.height() {
        for j in 0..gt.width() {
            by_class[gt.get(i, j)].push((i, j));
        }
    }
    let mut out = Vec::new();
    for (class, pixels) in by_class.iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let picks: Vec<usize> = if pixels.len() <= k {
            (0..pixels.len()).collect()
        } else {
            index::sample(rng, pixels.len(), k).into_vec()
        };
        out.extend(picks.into_iter().map(|p| Point { i: pixels[p].0, j: pixels[p].1, class }));
    }
    out
}

/// Box jitter target: the jittered box should cover `target_overlap` of the
/// object's pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub target_overlap: f64,
    pub rng_seed: u64,
}

impl JitterSpec {
    pub const TOLERANCE: f64 = 0.02;
    pub const MAX_DRAWS: usize = 10_000;

    pub fn new(target_overlap: f64, rng_seed: u64) -> Result<Self> {
        if !(target_overlap > 0.0 && target_overlap <= 1.0) {
            return Err(Error::invalid(format!("target overlap must be in (0, 1], got {target_overlap}")));
        }
        Ok(Self { target_overlap, rng_seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jittered {
    pub bbox: BoundingBox,
    pub overlap: f64,
    /// False when no draw met the tolerance and the tight box was returned.
    pub converged: bool,
}

/// Fraction of `class` pixels of `gt` inside `b`.
pub fn region_overlap(b: &BoundingBox, gt: &LabelMap) -> f64 {
    let mut total = 0usize;
    let mut inside = 0usize;
    for i in 0..gt.height() {
        for j in 0..gt.width() {
            if gt.get(i, j) == b.class {
                total += 1;
                inside += usize::from(b.contains(i, j));
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

/// Randomly translates and rescales `bbox` until it covers the requested
/// fraction of its class region in `gt`, within [`JitterSpec::TOLERANCE`].
pub fn jitter_box(bbox: &BoundingBox, gt: &LabelMap, spec: &JitterSpec) -> Result<Jittered> {
    let tight_overlap = region_overlap(bbox, gt);
    if tight_overlap == 0.0 {
        return Err(Error::invalid(format!("class {} has no pixels inside the box", bbox.class)));
    }
    let tight = Jittered { bbox: *bbox, overlap: tight_overlap, converged: true };
    if spec.target_overlap >= 1.0 {
        return Ok(tight);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (h, w) = (gt.height() as f64, gt.width() as f64);
    let (bh, bw) = (bbox.height() as f64, bbox.width() as f64);
    let (ci, cj) = ((bbox.i1 + bbox.i2) as f64 / 2.0, (bbox.j1 + bbox.j2) as f64 / 2.0);
    for _ in 0..JitterSpec::MAX_DRAWS {
        // translation up to one box size, scale in [0.5, 1.5]
        let ti = rng.gen_range(-1.0..1.0) * bh;
        let tj = rng.gen_range(-1.0..1.0) * bw;
        let si = rng.gen_range(0.5..1.5);
        let sj = rng.gen_range(0.5..1.5);
        let (hi, hj) = (bh * si / 2.0, bw * sj / 2.0);
        let i1 = (ci + ti - hi).round().clamp(0.0, h - 1.0) as usize;
        let i2 = (ci + ti + hi).round().clamp(0.0, h - 1.0) as usize;
        let j1 = (cj + tj - hj).round().clamp(0.0, w - 1.0) as usize;
        let j2 = (cj + tj + hj).round().clamp(0.0, w - 1.0) as usize;
        let Ok(candidate) = BoundingBox::new(i1, j1, i2, j2, bbox.class) else { continue };
        let overlap = region_overlap(&candidate, gt);
        if (overlap - spec.target_overlap).abs() <= JitterSpec::TOLERANCE {
            return Ok(Jittered { bbox: candidate, overlap, converged: true });
        }
    }
    Ok(Jittered { converged: false, ..tight })
}

/// Boxes and points for one ground-truth mask, as the `gen-weak` command
/// writes them.
pub fn synthesize_weak_labels(
    gt: &LabelMap,
    classes: &[String],
    background: usize,
    points_per_class: usize,
    jitter: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(AnnotationSet, Vec<Jittered>)> {
    gt.check_classes(classes.len())?;
    let mut boxes = derive_boxes_from_gt(gt, background);
    let mut jitters = Vec::new();
    if let Some(target) = jitter {
        for b in boxes.iter_mut() {
            let spec = JitterSpec::new(target, rng.gen())?;
            let j = jitter_box(b, gt, &spec)?;
            *b = j.bbox;
            jitters.push(j);
        }
    }
    let points = sample_points_from_gt(gt, points_per_class, rng);
    Ok((AnnotationSet { classes: classes.to_vec(), background, scribbles: Vec::new(), boxes, points }, jitters))
}
