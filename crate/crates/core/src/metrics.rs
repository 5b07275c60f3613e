//! IoU and Dice, per image and accumulated over a dataset.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::LabelMap;

/// Per-class pixel counters. Merging accumulators is associative and
/// commutative, so per-image scoring can run in any order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionAccumulator {
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
    pub pred_area: Vec<u64>,
    pub gt_area: Vec<u64>,
}

fn check_dims(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

impl ConfusionAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            intersection: vec![0; classes],
            union: vec![0; classes],
            pred_area: vec![0; classes],
            gt_area: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.intersection.len()
    }

    fn grow(&mut self, classes: usize) {
        if classes > self.classes() {
            for v in [&mut self.intersection, &mut self.union, &mut self.pred_area, &mut self.gt_area] {
                v.resize(classes, 0);
            }
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        check_dims(pred, gt)?;
        self.grow(pred.max_label().max(gt.max_label()) + 1);
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            let (p, g) = (p as usize, g as usize);
            self.pred_area[p] += 1;
            self.gt_area[g] += 1;
            if p == g {
                self.intersection[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[g] += 1;
            }
        }
        Ok(())
    }

    pub fn from_pair(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<Self> {
        let mut acc = Self::new(classes);
        acc.add(pred, gt)?;
        Ok(acc)
    }

    pub fn merge(&mut self, other: &Self) {
        self.grow(other.classes());
        for c in 0..other.classes() {
            self.intersection[c] += other.intersection[c];
            self.union[c] += other.union[c];
            self.pred_area[c] += other.pred_area[c];
            self.gt_area[c] += other.gt_area[c];
        }
    }

    /// `None` when the class is absent from both prediction and ground truth.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let u = *self.union.get(class)?;
        (u > 0).then(|| self.intersection[class] as f64 / u as f64)
    }

    pub fn dice(&self, class: usize) -> Option<f64> {
        let denom = self.pred_area.get(class)? + self.gt_area[class];
        (denom > 0).then(|| 2.0 * self.intersection[class] as f64 / denom as f64)
    }
}

pub fn iou(pred: &LabelMap, gt: &LabelMap, class: usize) -> Result<Option<f64>> {
    Ok(ConfusionAccumulator::from_pair(pred, gt, class + 1)?.iou(class))
}

pub fn dice(pred: &LabelMap, gt: &LabelMap, class: usize) -> Result<Option<f64>> {
    Ok(ConfusionAccumulator::from_pair(pred, gt, class + 1)?.dice(class))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub class: usize,
    pub iou: f64,
    pub dice: f64,
}

/// Dataset-level scores: counters are summed before any ratio is taken.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scores {
    /// Only classes present in prediction or ground truth somewhere.
    pub per_class: Vec<ClassScore>,
    pub miou: f64,
    pub mdice: f64,
}

impl Scores {
    pub fn class(&self, class: usize) -> Option<&ClassScore> {
        self.per_class.iter().find(|s| s.class == class)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou,dice\n");
        for s in &self.per_class {
            out.push_str(&format!("{},{},{}\n", s.class, s.iou, s.dice));
        }
        out
    }
}

pub fn scores(acc: &ConfusionAccumulator) -> Scores {
    let per_class: Vec<ClassScore> = (0..acc.classes())
        .filter_map(|c| Some(ClassScore { class: c, iou: acc.iou(c)?, dice: acc.dice(c)? }))
        .collect();
    let n = per_class.len().max(1) as f64;
    Scores {
        miou: per_class.iter().map(|s| s.iou).sum::<f64>() / n,
        mdice: per_class.iter().map(|s| s.dice).sum::<f64>() / n,
        per_class,
    }
}

pub fn mean_over_dataset<'a>(accumulators: impl IntoIterator<Item = &'a ConfusionAccumulator>) -> Scores {
    let mut total = ConfusionAccumulator::default();
    for a in accumulators {
        total.merge(a);
    }
    scores(&total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn third_example() -> (LabelMap, LabelMap) {
        let pred = LabelMap::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let gt = LabelMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        (pred, gt)
    }

    #[test]
    fn perfect_prediction() {
        let gt = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        for c in 0..3 {
            assert_eq!(iou(&gt, &gt, c).unwrap(), Some(1.0));
            assert_eq!(dice(&gt, &gt, c).unwrap(), Some(1.0));
        }
        assert_eq!(mean_over_dataset([&ConfusionAccumulator::from_pair(&gt, &gt, 3).unwrap()]).miou, 1.0);
    }

    #[test]
    fn disjoint_regions() {
        let pred = LabelMap::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let gt = LabelMap::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(iou(&pred, &gt, 1).unwrap(), Some(0.0));
    }

    #[test]
    fn one_third_example() {
        let (pred, gt) = third_example();
        assert!((iou(&pred, &gt, 1).unwrap().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&pred, &gt, 1).unwrap(), Some(0.5));
        assert_eq!(iou(&pred, &gt, 2).unwrap(), None);
        assert_eq!(dice(&pred, &gt, 2).unwrap(), None);
    }

    #[test]
    fn dataset_accumulation() {
        let (pred, gt) = third_example();
        let a = ConfusionAccumulator::from_pair(&pred, &gt, 2).unwrap();
        let single = mean_over_dataset([&a]);
        assert_eq!(single.class(1).unwrap().iou, a.iou(1).unwrap());
        let doubled = mean_over_dataset([&a, &a]);
        assert!((doubled.class(1).unwrap().iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(doubled, single);
        let csv = single.to_csv();
        assert!(csv.starts_with("class,iou,dice\n0,"));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let a = LabelMap::filled(2, 2, 0).unwrap();
        let b = LabelMap::filled(2, 3, 0).unwrap();
        assert!(iou(&a, &b, 0).is_err());
        assert!(dice(&a, &b, 0).is_err());
    }

    fn label_map(h: usize, w: usize) -> impl Strategy<Value = LabelMap> {
        proptest::collection::vec(0u8..3, h * w).prop_map(move |v| LabelMap::new(h, w, v).unwrap())
    }

    proptest! {
        #[test]
        fn dice_iou_identity(pred in label_map(4, 5), gt in label_map(4, 5)) {
            let acc = ConfusionAccumulator::from_pair(&pred, &gt, 3).unwrap();
            for c in 0..3 {
                if let (Some(i), Some(d)) = (acc.iou(c), acc.dice(c)) {
                    prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12);
                }
                prop_assert!(acc.intersection[c] <= acc.pred_area[c].min(acc.gt_area[c]));
                prop_assert!(acc.union[c] >= acc.pred_area[c].max(acc.gt_area[c]));
            }
        }

        #[test]
        fn class_permutation_symmetry(pred in label_map(3, 4), gt in label_map(3, 4), perm_idx in 0usize..6) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let perm = perms[perm_idx];
            let map = |m: &LabelMap| LabelMap::new(3, 4, m.as_slice().iter().map(|&l| perm[l as usize] as u8).collect()).unwrap();
            let a = ConfusionAccumulator::from_pair(&pred, &gt, 3).unwrap();
            let b = ConfusionAccumulator::from_pair(&map(&pred), &map(&gt), 3).unwrap();
            for (c, &pc) in perm.iter().enumerate() {
                prop_assert_eq!(a.iou(c), b.iou(pc));
                prop_assert_eq!(a.dice(c), b.dice(pc));
            }
        }
    }
}
