//! Batch refinement, constraint-satisfaction reporting and leave-one-out
//! ablations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::AnnotationSet;
use crate::constraints::{
    build_background, build_bboxes_shallow, build_bboxes_tight, build_borders, build_corners_all, build_fill,
    build_full_supervision, build_neighborhood, build_scribbles, SuperpixelMap,
};
use crate::error::{Error, Result};
use crate::formula::{conjoin, Family, Formula};
use crate::grid::{LabelMap, LogitField, Shape};
use crate::metrics::{mean_over_dataset, ConfusionAccumulator, Scores};
use crate::refine::{extract_mask, refine, RefineConfig, RefineTrace};

/// Which constraint families to build, and for which box classes the corner
/// prior applies (`None`: every box).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSet {
    pub families: Vec<Family>,
    pub corner_classes: Option<Vec<usize>>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            families: vec![
                Family::Scribbles,
                Family::Bbox,
                Family::Background,
                Family::Neighborhood,
                Family::Fill,
                Family::Borders,
            ],
            corner_classes: None,
        }
    }
}

impl ConstraintSet {
    pub fn new(families: Vec<Family>) -> Self {
        Self { families, ..Self::default() }
    }

    pub fn contains(&self, family: Family) -> bool {
        self.families.contains(&family)
    }

    pub fn without(&self, family: Family) -> Self {
        Self { families: self.families.iter().copied().filter(|&f| f != family).collect(), ..self.clone() }
    }

    pub fn with(&self, family: Family) -> Self {
        let mut out = self.clone();
        if !out.contains(family) {
            out.families.push(family);
        }
        out
    }

    /// One formula with a top-level term per family. Superpixels are needed
    /// for borders, ground truth for full supervision.
    pub fn compile(
        &self,
        ann: &AnnotationSet,
        shape: Shape,
        superpixels: Option<&SuperpixelMap>,
        gt: Option<&LabelMap>,
    ) -> Result<Formula> {
        if self.families.is_empty() {
            return Err(Error::invalid("constraint set is empty"));
        }
        let (h, w) = (shape.height, shape.width);
        for b in &ann.boxes {
            b.check(shape)?;
        }
        let mut parts = Vec::with_capacity(self.families.len());
        for &family in &self.families {
            parts.push(match family {
                Family::Fs => {
                    let gt = gt.ok_or_else(|| Error::invalid("full supervision needs ground truth"))?;
                    build_full_supervision(gt, shape.classes)?
                }
                Family::Scribbles => build_scribbles(&ann.all_scribbles()),
                Family::BboxShallow => build_bboxes_shallow(&ann.boxes),
                Family::Bbox => build_bboxes_tight(&ann.boxes),
                Family::Background => build_background(&ann.boxes, ann.background, h, w),
                Family::Neighborhood => build_neighborhood(h, w)?,
                Family::Fill => build_fill(h, w),
                Family::Borders => {
                    let sp = superpixels.ok_or_else(|| Error::invalid("borders need a superpixel map"))?;
                    if (sp.height(), sp.width()) != (h, w) {
                        return Err(Error::shape(format!(
                            "superpixels are {}x{}, image is {h}x{w}",
                            sp.height(),
                            sp.width()
                        )));
                    }
                    build_borders(sp)
                }
                Family::Corners => {
                    let boxes: Vec<_> = match &self.corner_classes {
                        None => ann.boxes.clone(),
                        Some(cls) => ann.boxes.iter().filter(|b| cls.contains(&b.class)).copied().collect(),
                    };
                    build_corners_all(&boxes)
                }
            });
        }
        let formula = conjoin(parts)?;
        formula.check(shape)?;
        Ok(formula)
    }
}

/// One image of a refinement batch.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub init: LogitField,
    pub annotations: AnnotationSet,
    pub superpixels: Option<SuperpixelMap>,
    pub gt: Option<LabelMap>,
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub name: String,
    pub initial_mask: LabelMap,
    pub mask: LabelMap,
    pub logits: LogitField,
    pub trace: RefineTrace,
}

pub fn refine_sample(sample: &Sample, set: &ConstraintSet, cfg: &RefineConfig) -> Result<SampleOutcome> {
    let shape = sample.init.shape();
    let formula = set.compile(&sample.annotations, shape, sample.superpixels.as_ref(), sample.gt.as_ref())?;
    let (logits, trace) = refine(&sample.init, &formula, cfg)?;
    Ok(SampleOutcome {
        name: sample.name.clone(),
        initial_mask: extract_mask(&sample.init),
        mask: extract_mask(&logits),
        logits,
        trace,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchReport {
    /// Present when every sample has ground truth.
    pub initial: Option<Scores>,
    pub refined: Option<Scores>,
    /// Fraction of images whose argmax mask satisfies each family, before
    /// and after refinement.
    pub initial_satisfaction: BTreeMap<String, f64>,
    pub final_satisfaction: BTreeMap<String, f64>,
    #[serde(skip)]
    pub outcomes: Vec<SampleOutcome>,
}

fn satisfaction_rates<'a>(flags: impl Iterator<Item = &'a BTreeMap<String, bool>>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for f in flags {
        for (k, &v) in f {
            let e = counts.entry(k.clone()).or_default();
            e.0 += usize::from(v);
            e.1 += 1;
        }
    }
    counts.into_iter().map(|(k, (s, n))| (k, s as f64 / n as f64)).collect()
}

fn dataset_scores(
    outcomes: &[SampleOutcome],
    samples: &[Sample],
    pick: fn(&SampleOutcome) -> &LabelMap,
) -> Result<Option<Scores>> {
    let mut accs = Vec::with_capacity(samples.len());
    for (o, s) in outcomes.iter().zip(samples) {
        let Some(gt) = &s.gt else { return Ok(None) };
        accs.push(ConfusionAccumulator::from_pair(pick(o), gt, s.init.shape().classes)?);
    }
    Ok(Some(mean_over_dataset(&accs)))
}

/// Refines every sample in parallel; results keep the input order.
pub fn run_batch(samples: &[Sample], set: &ConstraintSet, cfg: &RefineConfig) -> Result<BatchReport> {
    let outcomes = samples.par_iter().map(|s| refine_sample(s, set, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(BatchReport {
        initial: dataset_scores(&outcomes, samples, |o| &o.initial_mask)?,
        refined: dataset_scores(&outcomes, samples, |o| &o.mask)?,
        initial_satisfaction: satisfaction_rates(
            outcomes.iter().filter_map(|o| o.trace.first()).map(|r| &r.satisfaction),
        ),
        final_satisfaction: satisfaction_rates(outcomes.iter().filter_map(|o| o.trace.last()).map(|r| &r.satisfaction)),
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub full_set: Vec<Family>,
    pub leave_out: Option<Family>,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.full_set.is_empty() {
            return Err(Error::invalid("ablation full set is empty"));
        }
        if let Some(f) = self.leave_out {
            if !self.full_set.contains(&f) {
                return Err(Error::invalid(format!("left-out family `{f}` is not in the full set")));
            }
            if self.full_set.len() == 1 {
                return Err(Error::invalid("leaving out the only family leaves nothing to refine with"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// `all` for the full set, otherwise `w/o <family>`.
    pub constraints: String,
    pub miou: f64,
    pub delta_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("constraints,miou,delta_miou\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.constraints, r.miou, r.delta_miou));
        }
        out
    }
}

/// Full-set row, plus the leave-one-out row when `spec.leave_out` is set.
/// `base` supplies corner classes; its family list is replaced by the spec's.
pub fn run_ablation(
    spec: &AblationSpec,
    base: &ConstraintSet,
    samples: &[Sample],
    cfg: &RefineConfig,
) -> Result<AblationTable> {
    spec.validate()?;
    let leave_out: Vec<Family> = spec.leave_out.into_iter().collect();
    run_leave_one_out(&spec.full_set, &leave_out, base, samples, cfg)
}

/// Full-set row followed by one row per left-out family, in the given order.
pub fn run_leave_one_out(
    full_set: &[Family],
    leave_out: &[Family],
    base: &ConstraintSet,
    samples: &[Sample],
    cfg: &RefineConfig,
) -> Result<AblationTable> {
    for &f in leave_out {
        AblationSpec { full_set: full_set.to_vec(), leave_out: Some(f) }.validate()?;
    }
    if full_set.is_empty() {
        return Err(Error::invalid("ablation full set is empty"));
    }
    if samples.iter().any(|s| s.gt.is_none()) {
        return Err(Error::invalid("ablation needs ground truth for every sample"));
    }
    let full = ConstraintSet { families: full_set.to_vec(), ..base.clone() };
    let miou = |set: &ConstraintSet| -> Result<f64> {
        Ok(run_batch(samples, set, cfg)?.refined.map(|s| s.miou).unwrap_or(f64::NAN))
    };
    let baseline = miou(&full)?;
    let mut rows = vec![AblationRow { constraints: "all".into(), miou: baseline, delta_miou: 0.0 }];
    for &f in leave_out {
        let m = miou(&full.without(f))?;
        rows.push(AblationRow { constraints: format!("w/o {f}"), miou: m, delta_miou: m - baseline });
    }
    Ok(AblationTable { rows })
}
