//! SLIC superpixels for the border-preserving constraint.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::SuperpixelMap;
use crate::error::{Error, Result};
use crate::grid::LabelMap;
use crate::io::{read_superpixels, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicConfig {
    /// Desired number of superpixels.
    pub k: usize,
    pub compactness: f64,
    pub max_iters: usize,
}

impl Default for SlicConfig {
    fn default() -> Self {
        Self { k: 200, compactness: 10.0, max_iters: 10 }
    }
}

impl SlicConfig {
    /// Default `k` scaled from 200 superpixels per 64x64 image.
    pub fn for_area(height: usize, width: usize) -> Self {
        let k = ((200.0 * (height * width) as f64 / 4096.0).round() as usize).max(1);
        Self { k, ..Self::default() }
    }

    fn validate(&self, pixels: usize) -> Result<()> {
        if self.k == 0 || self.max_iters == 0 {
            return Err(Error::invalid("SLIC needs k >= 1 and max_iters >= 1"));
        }
        if self.k > pixels {
            return Err(Error::invalid(format!("SLIC k = {} exceeds pixel count {pixels}", self.k)));
        }
        if self.compactness.is_nan() || self.compactness <= 0.0 {
            return Err(Error::invalid("SLIC compactness must be positive"));
        }
        Ok(())
    }
}

/// Colors are compared on a 0..100 scale (CIELAB-like range), so the usual
/// compactness values around 10 balance color against position.
const COLOR_SCALE2: f64 = 1e4;

#[derive(Debug, Clone)]
struct Center {
    i: f64,
    j: f64,
    color: Vec<f64>,
}

fn color_dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Grid of `rows x cols` seeds with `rows * cols` close to `k`.
fn seed_grid(height: usize, width: usize, k: usize) -> (usize, usize) {
    let cols = ((k as f64 * width as f64 / height as f64).sqrt().round() as usize).clamp(1, width);
    let rows = ((k as f64 / cols as f64).round() as usize).clamp(1, height);
    (rows, cols)
}

fn gradient(img: &Image, i: usize, j: usize) -> f64 {
    let at = |i: usize, j: usize| img.pixel(i.min(img.height - 1), j.min(img.width - 1));
    let (up, down) = (at(i.saturating_sub(1), j), at(i + 1, j));
    let (left, right) = (at(i, j.saturating_sub(1)), at(i, j + 1));
    color_dist2(up, down) + color_dist2(left, right)
}

/// Clusters pixels in joint color/position space, then merges every
/// disconnected fragment into its largest adjacent segment.
pub fn slic(img: &Image, cfg: &SlicConfig) -> Result<SuperpixelMap> {
    let (h, w) = (img.height, img.width);
    cfg.validate(h * w)?;
    let (rows, cols) = seed_grid(h, w, cfg.k);
    let step = ((h * w) as f64 / (rows * cols) as f64).sqrt();
    let (si, sj) = (h as f64 / rows as f64, w as f64 / cols as f64);

    let mut centers: Vec<Center> = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            // cell centers; fractional on even-sized cells
            let (fi, fj) = ((r as f64 + 0.5) * si - 0.5, (c as f64 + 0.5) * sj - 0.5);
            let (i0, j0) = ((fi.round() as usize).min(h - 1), (fj.round() as usize).min(w - 1));
            let (mut ci, mut cj) = (i0, j0);
            // move to the lowest gradient in the 3x3 neighborhood; ties keep the seed
            let mut best = gradient(img, ci, cj);
            for ni in i0.saturating_sub(1)..=(i0 + 1).min(h - 1) {
                for nj in j0.saturating_sub(1)..=(j0 + 1).min(w - 1) {
                    let g = gradient(img, ni, nj);
                    if g < best {
                        best = g;
                        (ci, cj) = (ni, nj);
                    }
                }
            }
            let (pi, pj) = if (ci, cj) == (i0, j0) { (fi, fj) } else { (ci as f64, cj as f64) };
            centers.push(Center { i: pi, j: pj, color: img.pixel(ci, cj).to_vec() });
        }
    }

    // spatial term weight: (compactness / step)^2
    let lambda2 = (cfg.compactness / step).powi(2);
    let mut labels = vec![usize::MAX; h * w];
    let mut dist = vec![f64::INFINITY; h * w];
    let radius = (2.0 * step).ceil() as i64;
    for _ in 0..cfg.max_iters {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, ctr) in centers.iter().enumerate() {
            let (ci, cj) = (ctr.i.round() as i64, ctr.j.round() as i64);
            let (i_lo, i_hi) = ((ci - radius).max(0) as usize, ((ci + radius) as usize).min(h - 1));
            let (j_lo, j_hi) = ((cj - radius).max(0) as usize, ((cj + radius) as usize).min(w - 1));
            for i in i_lo..=i_hi {
                for j in j_lo..=j_hi {
                    let ds = (i as f64 - ctr.i).powi(2) + (j as f64 - ctr.j).powi(2);
                    let d = COLOR_SCALE2 * color_dist2(img.pixel(i, j), &ctr.color) + lambda2 * ds;
                    let p = i * w + j;
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = k;
                    }
                }
            }
        }
        // pixels no window reached go to the nearest center in space
        for p in 0..h * w {
            if labels[p] == usize::MAX || dist[p].is_infinite() {
                let (i, j) = ((p / w) as f64, (p % w) as f64);
                labels[p] = (0..centers.len())
                    .min_by(|&a, &b| {
                        let da = (centers[a].i - i).powi(2) + (centers[a].j - j).powi(2);
                        let db = (centers[b].i - i).powi(2) + (centers[b].j - j).powi(2);
                        da.total_cmp(&db)
                    })
                    .unwrap();
            }
        }
        let mut sums = vec![(0.0, 0.0, vec![0.0; img.channels], 0usize); centers.len()];
        for p in 0..h * w {
            let s = &mut sums[labels[p]];
            s.0 += (p / w) as f64;
            s.1 += (p % w) as f64;
            for (acc, v) in s.2.iter_mut().zip(img.pixel(p / w, p % w)) {
                *acc += v;
            }
            s.3 += 1;
        }
        for (ctr, (si, sj, color, n)) in centers.iter_mut().zip(sums) {
            if n > 0 {
                let n = n as f64;
                ctr.i = si / n;
                ctr.j = sj / n;
                ctr.color = color.into_iter().map(|c| c / n).collect();
            }
        }
    }
    let min_size = ((h * w) / (4 * centers.len())).max(1);
    Ok(enforce_connectivity(img, &labels, min_size))
}

/// 4-connected components of equal labels; returns (component id per pixel,
/// component sizes, component labels).
fn components(h: usize, w: usize, labels: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut owner = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (i, j) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == labels[p] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if i > 0 {
                visit(p - w);
            }
            if i + 1 < h {
                visit(p + w);
            }
            if j > 0 {
                visit(p - 1);
            }
            if j + 1 < w {
                visit(p + 1);
            }
        }
        sizes.push(size);
        owner.push(labels[start]);
    }
    (comp, sizes, owner)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Components of at least `min_size` pixels become superpixels of their own;
/// smaller fragments join the adjacent segment closest in mean color, the
/// larger one on ties.
fn enforce_connectivity(img: &Image, labels: &[usize], min_size: usize) -> SuperpixelMap {
    let (h, w) = (img.height, img.width);
    let (comp, sizes, owner) = components(h, w, labels);
    let n = sizes.len();
    let mut colors = vec![vec![0.0; img.channels]; n];
    for p in 0..h * w {
        for (acc, v) in colors[comp[p]].iter_mut().zip(img.pixel(p / w, p % w)) {
            *acc += v / sizes[comp[p]] as f64;
        }
    }
    // the largest component of each cluster keeps it
    let mut keeper = std::collections::HashMap::new();
    for c in 0..n {
        let e = keeper.entry(owner[c]).or_insert(c);
        if sizes[c] > sizes[*e] {
            *e = c;
        }
    }
    let mut anchored: Vec<bool> = (0..n).map(|c| keeper[&owner[c]] == c || sizes[c] >= min_size).collect();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for p in 0..h * w {
        let (i, j) = (p / w, p % w);
        for q in [(i + 1 < h).then(|| p + w), (j + 1 < w).then(|| p + 1)].into_iter().flatten() {
            let (a, b) = (comp[p], comp[q]);
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
    }
    adjacency.iter_mut().for_each(|v| {
        v.sort_unstable();
        v.dedup();
    });
    let mut parent: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = sizes.clone();
    // A fragment waits while its closest-colored neighbor is itself an
    // unmerged fragment; only when nothing can move does it settle for the
    // closest anchored segment.
    let mut strict = true;
    loop {
        let mut changed = false;
        for c in 0..n {
            if anchored[c] {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for &nb in &adjacency[c] {
                let root = find(&mut parent, nb);
                if !strict && !anchored[root] {
                    continue;
                }
                let d = color_dist2(&colors[c], &colors[nb]);
                if best.is_none_or(|(bd, b)| d < bd || (d == bd && size[root] > size[b])) {
                    best = Some((d, root));
                }
            }
            if let Some((_, root)) = best.filter(|&(_, root)| anchored[root]) {
                parent[c] = root;
                size[root] += sizes[c];
                anchored[c] = true;
                changed = true;
            }
        }
        if !changed && !strict {
            break;
        }
        strict = changed;
    }
    let mut remap = vec![u32::MAX; n];
    let mut next = 0u32;
    let out = (0..h * w)
        .map(|p| {
            let root = find(&mut parent, comp[p]);
            if remap[root] == u32::MAX {
                remap[root] = next;
                next += 1;
            }
            remap[root]
        })
        .collect();
    SuperpixelMap::new(h, w, out).expect("relabeled contiguously")
}

/// Reads an externally computed superpixel map.
pub fn load_superpixels(path: &Path, height: usize, width: usize) -> Result<SuperpixelMap> {
    read_superpixels(path, height, width)
}

/// Fraction of ground-truth boundary pixels within `tolerance` (Chebyshev
/// distance) of a superpixel boundary pixel.
pub fn boundary_recall(sp: &SuperpixelMap, gt: &LabelMap, tolerance: usize) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let is_boundary = |f: &dyn Fn(usize, usize) -> u64, i: usize, j: usize| {
        (i + 1 < h && f(i, j) != f(i + 1, j)) || (j + 1 < w && f(i, j) != f(i, j + 1))
    };
    let gt_at = |i: usize, j: usize| gt.get(i, j) as u64;
    let sp_at = |i: usize, j: usize| sp.get(i, j) as u64;
    let mut total = 0;
    let mut hit = 0;
    for i in 0..h {
        for j in 0..w {
            if !is_boundary(&gt_at, i, j) {
                continue;
            }
            total += 1;
            let found = (i.saturating_sub(tolerance)..=(i + tolerance).min(h - 1))
                .any(|a| (j.saturating_sub(tolerance)..=(j + tolerance).min(w - 1)).any(|b| is_boundary(&sp_at, a, b)));
            hit += usize::from(found);
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// True when every superpixel is a single 4-connected region.
pub fn is_connected(sp: &SuperpixelMap) -> bool {
    let labels: Vec<usize> = sp.as_slice().iter().map(|&l| l as usize).collect();
    let (_, sizes, _) = components(sp.height(), sp.width(), &labels);
    sizes.len() == sp.count()
}
