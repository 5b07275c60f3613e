//! Exact `p(formula)` by weighted enumeration of every label map.
//!
//! Only usable on tiny grids; it exists to check the fuzzy engine.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::grid::{LabelMap, ProbField};

/// Cap on the number of label maps enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    max_states: u64,
}

impl OracleBudget {
    pub const DEFAULT_MAX_STATES: u64 = 2_000_000;

    pub fn new(max_states: u64) -> Result<Self> {
        if max_states == 0 {
            return Err(Error::invalid("oracle budget must allow at least one state"));
        }
        Ok(Self { max_states })
    }

    pub fn max_states(&self) -> u64 {
        self.max_states
    }
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self { max_states: Self::DEFAULT_MAX_STATES }
    }
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct Sum {
    sum: f64,
    comp: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn check_budget(probs: &ProbField, budget: OracleBudget) -> Result<()> {
    let shape = probs.shape();
    let mut required: u128 = 1;
    for _ in 0..shape.pixels() {
        required = required.saturating_mul(shape.classes as u128);
    }
    if required > budget.max_states as u128 {
        let required =
            if required == u128::MAX { format!("{}^{}", shape.classes, shape.pixels()) } else { required.to_string() };
        return Err(Error::BudgetExceeded { required, budget: budget.max_states });
    }
    Ok(())
}

/// Probability mass of satisfying and violating label maps.
fn masses(formula: &Formula, probs: &ProbField, budget: OracleBudget) -> Result<(f64, f64)> {
    check_budget(probs, budget)?;
    let shape = probs.shape();
    formula.check(shape)?;
    // Odometer over the classes with non-zero mass at each pixel, row-major,
    // pixel 0 the most significant digit.
    let support: Vec<Vec<usize>> = probs
        .data()
        .chunks_exact(shape.classes)
        .map(|px| (0..shape.classes).filter(|&c| px[c] > 0.0).collect())
        .collect();
    let n = shape.pixels();
    let mut digits = vec![0usize; n];
    let mut labels = LabelMap::new(shape.height, shape.width, support.iter().map(|s| s[0] as u8).collect())?;
    let mut sat = Sum::default();
    let mut unsat = Sum::default();
    loop {
        let mut weight = 1.0;
        for (p, &l) in labels.as_slice().iter().enumerate() {
            weight *= probs.data()[p * shape.classes + l as usize];
        }
        if formula.holds(&labels) {
            sat.add(weight);
        } else {
            unsat.add(weight);
        }
        // advance the least significant digit
        let mut p = n;
        loop {
            if p == 0 {
                return Ok((sat.value(), unsat.value()));
            }
            p -= 1;
            digits[p] += 1;
            if digits[p] < support[p].len() {
                labels.as_mut_slice()[p] = support[p][digits[p]] as u8;
                break;
            }
            digits[p] = 0;
            labels.as_mut_slice()[p] = support[p][0] as u8;
        }
    }
}

/// `sum_y [y satisfies formula] * prod_ij p(i, j, y_ij)`.
pub fn exact_prob(formula: &Formula, probs: &ProbField, budget: OracleBudget) -> Result<f64> {
    Ok(masses(formula, probs, budget)?.0)
}

/// `alpha = p(gt | formula holds)`, `beta = p(gt | formula fails)`; `None`
/// when the conditioning event has zero probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBeta {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

/// Probability of one label map under independent pixels.
pub fn map_prob(labels: &LabelMap, probs: &ProbField) -> f64 {
    let classes = probs.shape().classes;
    labels.as_slice().iter().enumerate().fold(1.0, |acc, (p, &l)| acc * probs.data()[p * classes + l as usize])
}

pub fn exact_alpha_beta(
    formula: &Formula,
    gt: &LabelMap,
    probs: &ProbField,
    budget: OracleBudget,
) -> Result<AlphaBeta> {
    let shape = probs.shape();
    if gt.height() != shape.height || gt.width() != shape.width {
        return Err(Error::shape("ground truth and field dimensions differ"));
    }
    gt.check_classes(shape.classes)?;
    let (sat, unsat) = masses(formula, probs, budget)?;
    let p_gt = map_prob(gt, probs);
    let gt_sat = formula.holds(gt);
    Ok(AlphaBeta {
        alpha: (sat > 0.0).then(|| if gt_sat { p_gt / sat } else { 0.0 }),
        beta: (unsat > 0.0).then(|| if gt_sat { 0.0 } else { p_gt / unsat }),
    })
}
