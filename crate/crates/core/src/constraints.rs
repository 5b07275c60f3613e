//! Builders that turn weak annotations and structural priors into formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{Family, Formula, Label};
use crate::grid::{LabelMap, Shape};

/// In-bounds Moore neighbors of `(i, j)`, row-major order.
pub fn moore_neighbors(height: usize, width: usize, i: usize, j: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(8);
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            if di == 0 && dj == 0 {
                continue;
            }
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if ni >= 0 && nj >= 0 && (ni as usize) < height && (nj as usize) < width {
                out.push((ni as usize, nj as usize));
            }
        }
    }
    out
}

/// Inclusive pixel rectangle tagged with a target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub i1: usize,
    pub j1: usize,
    pub i2: usize,
    pub j2: usize,
    pub class: usize,
}

impl BoundingBox {
    pub fn new(i1: usize, j1: usize, i2: usize, j2: usize, class: usize) -> Result<Self> {
        if i1 > i2 || j1 > j2 {
            return Err(Error::invalid(format!("box corners ({i1}, {j1})-({i2}, {j2}) are inverted")));
        }
        Ok(Self { i1, j1, i2, j2, class })
    }

    pub fn height(&self) -> usize {
        self.i2 - self.i1 + 1
    }

    pub fn width(&self) -> usize {
        self.j2 - self.j1 + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i1..=self.i2).contains(&i) && (self.j1..=self.j2).contains(&j)
    }

    pub fn check(&self, shape: Shape) -> Result<()> {
        if self.i2 >= shape.height || self.j2 >= shape.width {
            return Err(Error::OutOfBounds(format!(
                "box ({}, {})-({}, {}) exceeds {}x{} grid",
                self.i1, self.j1, self.i2, self.j2, shape.height, shape.width
            )));
        }
        if self.class >= shape.classes {
            return Err(Error::OutOfBounds(format!("box class {} exceeds class count {}", self.class, shape.classes)));
        }
        Ok(())
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.i1..=self.i2).flat_map(move |i| (self.j1..=self.j2).map(move |j| (i, j)))
    }
}

/// A set of pixels that should all carry one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scribble {
    pixels: Vec<(usize, usize)>,
    class: usize,
}

impl Scribble {
    pub fn new(mut pixels: Vec<(usize, usize)>, class: usize) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::invalid("scribble has no pixels"));
        }
        pixels.sort_unstable();
        pixels.dedup();
        Ok(Self { pixels, class })
    }

    pub fn point(i: usize, j: usize, class: usize) -> Self {
        Self { pixels: vec![(i, j)], class }
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn class(&self) -> usize {
        self.class
    }
}

/// Superpixel index per pixel, contiguous in `[0, count)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl SuperpixelMap {
    /// Validates that every index in `[0, K)` occurs, where `K - 1` is the
    /// largest index present.
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::shape(format!(
                "superpixel map has {} entries for a {height}x{width} grid",
                labels.len()
            )));
        }
        let count = *labels.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; count];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("superpixel index {missing} never occurs")));
        }
        Ok(Self { height, width, labels, count })
    }

    /// Re-indexes arbitrary labels to `[0, K)` preserving their sorted order.
    pub fn from_raw(height: usize, width: usize, raw: &[u32]) -> Result<Self> {
        let mut distinct = raw.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = raw.iter().map(|v| distinct.binary_search(v).unwrap() as u32).collect();
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.labels[i * self.width + j]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }
}

/// The axis-aligned ellipse inscribed in a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseRegion {
    pub center_i: f64,
    pub center_j: f64,
    pub radius_i: f64,
    pub radius_j: f64,
    pub bbox: BoundingBox,
}

impl EllipseRegion {
    pub fn inscribed(bbox: BoundingBox) -> Result<Self> {
        let radius_i = (bbox.i2 - bbox.i1) as f64 / 2.0;
        let radius_j = (bbox.j2 - bbox.j1) as f64 / 2.0;
        if radius_i <= 0.0 || radius_j <= 0.0 {
            return Err(Error::invalid(format!(
                "box ({}, {})-({}, {}) is one pixel thick; its ellipse is degenerate",
                bbox.i1, bbox.j1, bbox.i2, bbox.j2
            )));
        }
        Ok(Self {
            center_i: (bbox.i1 + bbox.i2) as f64 / 2.0,
            center_j: (bbox.j1 + bbox.j2) as f64 / 2.0,
            radius_i,
            radius_j,
            bbox,
        })
    }

    /// Left-hand side of the ellipse equation at pixel `(i, j)`.
    pub fn level(&self, i: usize, j: usize) -> f64 {
        let di = (i as f64 - self.center_i) / self.radius_i;
        let dj = (j as f64 - self.center_j) / self.radius_j;
        di * di + dj * dj
    }

    /// Pixels on the boundary count as inside.
    pub fn is_outside(&self, i: usize, j: usize) -> bool {
        self.level(i, j) > 1.0
    }

    /// Box pixels strictly outside the ellipse.
    pub fn corner_pixels(&self) -> Vec<(usize, usize)> {
        self.bbox.pixels().filter(|&(i, j)| self.is_outside(i, j)).collect()
    }
}

/// Every pixel must have its ground-truth class.
pub fn build_full_supervision(gt: &LabelMap, classes: usize) -> Result<Formula> {
    gt.check_classes(classes)?;
    let label = Family::Fs.label();
    let mut atoms = Vec::with_capacity(gt.height() * gt.width());
    for i in 0..gt.height() {
        for j in 0..gt.width() {
            atoms.push(Formula::class_atom(&label, i, j, gt.get(i, j)));
        }
    }
    Ok(Formula::and(&label, atoms))
}

pub fn build_scribble(s: &Scribble) -> Formula {
    let label = Family::Scribbles.label();
    let atoms = s.pixels().iter().map(|&(i, j)| Formula::class_atom(&label, i, j, s.class())).collect();
    Formula::and(&label, atoms)
}

/// Conjunction of several scribbles under one family label.
pub fn build_scribbles(scribbles: &[Scribble]) -> Formula {
    Formula::and(&Family::Scribbles.label(), scribbles.iter().map(build_scribble).collect())
}

/// At least one box pixel has the target class.
pub fn build_bbox_shallow(b: &BoundingBox) -> Formula {
    let label = Family::BboxShallow.label();
    let atoms = b.pixels().map(|(i, j)| Formula::class_atom(&label, i, j, b.class)).collect();
    Formula::or(&label, atoms).expect("a box has at least one pixel")
}

/// Every row and every column of the box contains the target class.
pub fn build_bbox_tight(b: &BoundingBox) -> Formula {
    let label = Family::Bbox.label();
    let atom = |i, j| Formula::class_atom(&label, i, j, b.class);
    let rows =
        (b.i1..=b.i2).map(|i| Formula::or(&label, (b.j1..=b.j2).map(|j| atom(i, j)).collect()).unwrap()).collect();
    let cols =
        (b.j1..=b.j2).map(|j| Formula::or(&label, (b.i1..=b.i2).map(|i| atom(i, j)).collect()).unwrap()).collect();
    Formula::and(&label, vec![Formula::and(&label, rows), Formula::and(&label, cols)])
}

pub fn build_bboxes_tight(boxes: &[BoundingBox]) -> Formula {
    Formula::and(&Family::Bbox.label(), boxes.iter().map(build_bbox_tight).collect())
}

pub fn build_bboxes_shallow(boxes: &[BoundingBox]) -> Formula {
    Formula::and(&Family::BboxShallow.label(), boxes.iter().map(build_bbox_shallow).collect())
}

/// Pixels outside the union of all boxes take the background class.
pub fn build_background(boxes: &[BoundingBox], background_class: usize, height: usize, width: usize) -> Formula {
    let label = Family::Background.label();
    let mut atoms = Vec::new();
    for i in 0..height {
        for j in 0..width {
            if !boxes.iter().any(|b| b.contains(i, j)) {
                atoms.push(Formula::class_atom(&label, i, j, background_class));
            }
        }
    }
    Formula::and(&label, atoms)
}

/// Every pixel agrees with at least one Moore neighbor.
pub fn build_neighborhood(height: usize, width: usize) -> Result<Formula> {
    if height * width < 2 {
        return Err(Error::invalid(format!("neighborhood constraint needs at least two pixels, got {height}x{width}")));
    }
    let label = Family::Neighborhood.label();
    let mut clauses = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let eqs = moore_neighbors(height, width, i, j)
                .into_iter()
                .map(|n| Formula::eq_atom(&label, (i, j), n))
                .collect::<Result<Vec<_>>>()?;
            clauses.push(Formula::or(&label, eqs)?);
        }
    }
    Ok(Formula::and(&label, clauses))
}

/// A pixel whose neighbors all agree takes their class.
///
/// The premise ranges over unordered distinct neighbor pairs.
pub fn build_fill(height: usize, width: usize) -> Formula {
    let label = Family::Fill.label();
    let mut clauses = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let nb = moore_neighbors(height, width, i, j);
            let mut pairs = Vec::with_capacity(nb.len() * nb.len().saturating_sub(1) / 2);
            for (k, &a) in nb.iter().enumerate() {
                for &b in &nb[k + 1..] {
                    pairs.push(Formula::eq_atom(&label, a, b).unwrap());
                }
            }
            let center = nb.iter().map(|&n| Formula::eq_atom(&label, (i, j), n).unwrap()).collect();
            clauses.push(Formula::implies(&label, Formula::and(&label, pairs), Formula::and(&label, center)));
        }
    }
    Formula::and(&label, clauses)
}

/// Neighbors inside the same superpixel share a class. Each unordered pair
/// is emitted once; pairs across superpixel boundaries are unconstrained.
pub fn build_borders(sp: &SuperpixelMap) -> Formula {
    let label = Family::Borders.label();
    let (h, w) = (sp.height(), sp.width());
    let mut atoms = Vec::new();
    for i in 0..h {
        for j in 0..w {
            for (ni, nj) in moore_neighbors(h, w, i, j) {
                if (ni, nj) > (i, j) && sp.get(i, j) == sp.get(ni, nj) {
                    atoms.push(Formula::eq_atom(&label, (i, j), (ni, nj)).unwrap());
                }
            }
        }
    }
    Formula::and(&label, atoms)
}

/// Box pixels outside the inscribed ellipse do not take the target class.
pub fn build_corners(b: &BoundingBox) -> Result<Formula> {
    let label: Label = Family::Corners.label();
    let ellipse = EllipseRegion::inscribed(*b)?;
    let clauses = ellipse
        .corner_pixels()
        .into_iter()
        .map(|(i, j)| Formula::not(&label, Formula::class_atom(&label, i, j, b.class)))
        .collect();
    Ok(Formula::and(&label, clauses))
}

/// Corner constraints for several boxes; boxes too thin for an ellipse are
/// skipped.
pub fn build_corners_all(boxes: &[BoundingBox]) -> Formula {
    let label = Family::Corners.label();
    Formula::and(&label, boxes.iter().filter_map(|b| build_corners(b).ok()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{conjoin, eval_discrete, Node};

    /// All label maps of a `h`x`w` grid with `classes` classes.
    fn all_maps(h: usize, w: usize, classes: u8) -> Vec<LabelMap> {
        let n = h * w;
        let total = (classes as usize).pow(n as u32);
        (0..total)
            .map(|mut code| {
                let labels = (0..n)
                    .map(|_| {
                        let l = (code % classes as usize) as u8;
                        code /= classes as usize;
                        l
                    })
                    .collect();
                LabelMap::new(h, w, labels).unwrap()
            })
            .collect()
    }

    fn count_sat(f: &Formula, h: usize, w: usize, classes: u8) -> usize {
        all_maps(h, w, classes).iter().filter(|m| eval_discrete(f, m)).count()
    }

    fn sat_set(f: &Formula, h: usize, w: usize, classes: u8) -> Vec<bool> {
        all_maps(h, w, classes).iter().map(|m| eval_discrete(f, m)).collect()
    }

    #[test]
    fn moore_clipped_at_borders() {
        assert_eq!(moore_neighbors(3, 3, 1, 1).len(), 8);
        assert_eq!(moore_neighbors(3, 3, 0, 0), vec![(0, 1), (1, 0), (1, 1)]);
        assert_eq!(moore_neighbors(1, 2, 0, 0), vec![(0, 1)]);
        assert!(moore_neighbors(1, 1, 0, 0).is_empty());
    }

    #[test]
    fn full_supervision_structure() {
        let gt = LabelMap::new(1, 1, vec![2]).unwrap();
        let f = build_full_supervision(&gt, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&f).unwrap(),
            r#"{"op":"and","label":"fs","children":[{"op":"class_atom","label":"fs","i":0,"j":0,"c":2}]}"#
        );
        let gt = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let f = build_full_supervision(&gt, 2).unwrap();
        assert_eq!(f.atom_count(), 4);
        assert!(build_full_supervision(&gt, 1).is_err());
    }

    #[test]
    fn full_supervision_unique_model() {
        let gt = LabelMap::new(3, 3, vec![0, 1, 2, 2, 1, 0, 1, 1, 1]).unwrap();
        let f = build_full_supervision(&gt, 3).unwrap();
        assert_eq!(count_sat(&f, 3, 3, 3), 1);
    }

    #[test]
    fn scribble_counts() {
        let s = Scribble::new(vec![(0, 0)], 1).unwrap();
        assert_eq!(build_scribble(&s).atom_count(), 1);
        let s = Scribble::new(vec![(0, 0), (1, 1)], 0).unwrap();
        assert_eq!(count_sat(&build_scribble(&s), 2, 2, 2), 4);
        assert!(Scribble::new(vec![], 0).is_err());
    }

    #[test]
    fn full_scribble_equals_constant_supervision() {
        let all: Vec<_> = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        let s = Scribble::new(all, 1).unwrap();
        let gt = LabelMap::filled(2, 3, 1).unwrap();
        let fs = build_full_supervision(&gt, 2).unwrap();
        assert_eq!(sat_set(&build_scribble(&s), 2, 3, 2), sat_set(&fs, 2, 3, 2));
    }

    #[test]
    fn bbox_shallow_counts() {
        let b = BoundingBox::new(0, 0, 0, 0, 1).unwrap();
        assert!(matches!(build_bbox_shallow(&b).node(), Node::Or(c) if c.len() == 1));
        let b = BoundingBox::new(0, 0, 1, 1, 1).unwrap();
        assert_eq!(count_sat(&build_bbox_shallow(&b), 2, 2, 2), 15);
    }

    #[test]
    fn bbox_tight_counts() {
        let b = BoundingBox::new(0, 0, 1, 1, 1).unwrap();
        assert_eq!(count_sat(&build_bbox_tight(&b), 2, 2, 2), 7);
        let single = BoundingBox::new(1, 1, 1, 1, 1).unwrap();
        assert_eq!(sat_set(&build_bbox_tight(&single), 2, 2, 2), sat_set(&build_bbox_shallow(&single), 2, 2, 2));
    }

    #[test]
    fn bbox_tight_entails_shallow_on_3x3() {
        let maps = all_maps(3, 3, 2);
        for b in [
            BoundingBox::new(0, 0, 2, 2, 1).unwrap(),
            BoundingBox::new(0, 1, 1, 2, 1).unwrap(),
            BoundingBox::new(1, 0, 2, 0, 0).unwrap(),
        ] {
            let tight = build_bbox_tight(&b);
            let shallow = build_bbox_shallow(&b);
            for m in &maps {
                assert!(!eval_discrete(&tight, m) || eval_discrete(&shallow, m));
            }
        }
    }

    #[test]
    fn background_pixels() {
        let f = build_background(&[], 0, 2, 2);
        assert_eq!(f.atom_count(), 4);
        let whole = BoundingBox::new(0, 0, 1, 1, 1).unwrap();
        assert!(build_background(&[whole], 0, 2, 2).is_truth());
        let corner = BoundingBox::new(0, 0, 1, 1, 1).unwrap();
        let f = build_background(&[corner], 0, 3, 3);
        let mut covered = Vec::new();
        f.for_each_atom(&mut |a| {
            if let crate::formula::Atom::Class { i, j, class } = *a {
                assert_eq!(class, 0);
                covered.push((i, j));
            }
        });
        assert_eq!(covered, vec![(0, 2), (1, 2), (2, 0), (2, 1), (2, 2)]);
    }

    #[test]
    fn neighborhood_small_grids() {
        assert!(build_neighborhood(1, 1).is_err());
        let f = build_neighborhood(1, 2).unwrap();
        assert_eq!(f.atom_count(), 2);
        assert_eq!(count_sat(&f, 1, 2, 2), 2);
        let f = build_neighborhood(2, 2).unwrap();
        assert_eq!(count_sat(&f, 2, 2, 2), 8);
        let f = build_neighborhood(3, 4).unwrap();
        assert!(eval_discrete(&f, &LabelMap::filled(3, 4, 2).unwrap()));
    }

    #[test]
    fn fill_hole_is_violated() {
        let f = build_fill(3, 3);
        let mut m = LabelMap::filled(3, 3, 0).unwrap();
        assert!(eval_discrete(&f, &m));
        m.set(1, 1, 1);
        assert!(!eval_discrete(&f, &m));
        // pair count at the center: 8 choose 2
        let Node::And(clauses) = f.node() else { panic!() };
        let Node::Implies(premise, _) = clauses[4].node() else { panic!() };
        assert_eq!(premise.atom_count(), 28);
    }

    #[test]
    fn neighborhood_entails_fill_on_2x3() {
        let nb = build_neighborhood(2, 3).unwrap();
        let fill = build_fill(2, 3);
        for m in all_maps(2, 3, 2) {
            assert!(!eval_discrete(&nb, &m) || eval_discrete(&fill, &m));
        }
    }

    #[test]
    fn borders_pairs() {
        let sp = SuperpixelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        assert!(build_borders(&sp).is_truth());
        let sp = SuperpixelMap::new(1, 2, vec![0, 0]).unwrap();
        assert_eq!(build_borders(&sp).atom_count(), 1);
        let sp = SuperpixelMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        let f = build_borders(&sp);
        let mut pairs = Vec::new();
        f.for_each_atom(&mut |a| {
            if let crate::formula::Atom::Equal { a, b } = *a {
                pairs.push((a, b));
            }
        });
        assert_eq!(pairs, vec![((0, 0), (1, 0)), ((0, 1), (1, 1))]);
    }

    #[test]
    fn borders_pairs_unique() {
        let sp = SuperpixelMap::new(3, 3, vec![0; 9]).unwrap();
        let mut pairs = Vec::new();
        build_borders(&sp).for_each_atom(&mut |a| {
            if let crate::formula::Atom::Equal { a, b } = *a {
                let key = if a < b { (a, b) } else { (b, a) };
                pairs.push(key);
            }
        });
        let n = pairs.len();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), n);
        // 3x3 king graph: 12 orthogonal + 8 diagonal edges
        assert_eq!(n, 20);
    }

    #[test]
    fn superpixel_map_validation() {
        assert!(SuperpixelMap::new(1, 2, vec![0, 2]).is_err());
        let sp = SuperpixelMap::from_raw(1, 3, &[0, 2, 2]).unwrap();
        assert_eq!(sp.as_slice(), &[0, 1, 1]);
        assert_eq!(sp.count(), 2);
    }

    #[test]
    fn corners_geometry() {
        let b = BoundingBox::new(0, 0, 9, 9, 1).unwrap();
        let e = EllipseRegion::inscribed(b).unwrap();
        assert_eq!(e.level(0, 0), 2.0);
        for p in [(0, 0), (0, 9), (9, 0), (9, 9)] {
            assert!(e.is_outside(p.0, p.1));
        }
        let b = BoundingBox::new(2, 3, 8, 11, 1).unwrap();
        let e = EllipseRegion::inscribed(b).unwrap();
        assert_eq!(e.level(5, 7), 0.0);
        assert!(!e.is_outside(5, 7));
        // ties on the ellipse are inside
        assert_eq!(e.level(2, 7), 1.0);
        assert!(!e.is_outside(2, 7));
        assert!(build_corners(&BoundingBox::new(0, 0, 0, 5, 1).unwrap()).is_err());
        assert!(build_corners(&BoundingBox::new(0, 0, 5, 0, 1).unwrap()).is_err());
    }

    #[test]
    fn inscribed_ellipse_map_satisfies_corners() {
        let b = BoundingBox::new(1, 2, 9, 14, 1).unwrap();
        let e = EllipseRegion::inscribed(b).unwrap();
        let gt = LabelMap::from_fn(12, 18, |i, j| u8::from(b.contains(i, j) && !e.is_outside(i, j))).unwrap();
        assert!(eval_discrete(&build_corners(&b).unwrap(), &gt));
        let mut bad = gt.clone();
        bad.set(1, 2, 1);
        assert!(!eval_discrete(&build_corners(&b).unwrap(), &bad));
    }

    #[test]
    fn conjoin_is_and_of_children() {
        let s = build_scribble(&Scribble::new(vec![(0, 0)], 1).unwrap());
        let b = build_bbox_tight(&BoundingBox::new(0, 0, 1, 1, 1).unwrap());
        let f = conjoin(vec![s.clone(), b.clone()]).unwrap();
        for m in all_maps(2, 2, 2) {
            assert_eq!(eval_discrete(&f, &m), eval_discrete(&s, &m) && eval_discrete(&b, &m));
        }
        let single = conjoin(vec![s.clone()]).unwrap();
        assert!(matches!(single.node(), Node::And(c) if c.len() == 1 && c[0] == s));
    }

    #[test]
    fn builders_stay_in_bounds() {
        let shape = Shape::new(4, 5, 3);
        let b = BoundingBox::new(1, 1, 3, 4, 2).unwrap();
        let sp = SuperpixelMap::new(4, 5, (0..20).map(|k| k / 7).collect()).unwrap();
        for f in [
            build_bbox_tight(&b),
            build_bbox_shallow(&b),
            build_background(&[b], 0, 4, 5),
            build_neighborhood(4, 5).unwrap(),
            build_fill(4, 5),
            build_borders(&sp),
            build_corners(&b).unwrap(),
        ] {
            f.check(shape).unwrap();
        }
    }
}
