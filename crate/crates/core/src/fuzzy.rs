//! Product t-norm evaluation of formulas in log-space, and the exact
//! reverse-mode gradient of the semantic loss with respect to logits.
//!
//! Node semantics, with `u` the log-probability of a child:
//!
//! * class atom: `ln p(i, j, c)`
//! * equality atom: `ln sum_c p1(c) p2(c)`
//! * `not`: `ln(1 - e^u)`
//! * `and`: sum of children
//! * `or`: `ln(1 - prod(1 - p_k))`, accumulated as one `log1mexp` of the sum
//!   of the children's complement logs
//! * `a => b`: lowered to `not a or b`
//!
//! Complement logs are floored at `ln 1e-12` so a certain child never makes
//! the loss or its gradient infinite.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formula::{Atom, Formula, Label, Node};
use crate::grid::{
    log1mexp_raw, log_softmax_data, log_sum_exp, softmax_field, LabelMap, LogProb, LogitField, ProbField, Shape,
    LOG_EPS,
};

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Flat index of `(i, j, c)` in the log-prob buffer.
    Class(u32),
    /// Flat indices of class 0 for the two pixels.
    Equal(u32, u32),
    Not(u32),
    And {
        start: u32,
        len: u32,
    },
    Or {
        start: u32,
        len: u32,
    },
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    node: u32,
    /// The child enters an `or` through its negation (premise of `=>`).
    negated: bool,
}

/// A formula flattened into a topologically ordered tape.
#[derive(Debug, Clone)]
pub struct Circuit {
    shape: Shape,
    ops: Vec<Op>,
    edges: Vec<Edge>,
    /// `(node, label index)` for each top-level term.
    terms: Vec<(u32, u32)>,
    labels: Vec<Label>,
}

impl Circuit {
    pub fn compile(formula: &Formula, shape: Shape) -> Result<Self> {
        formula.check(shape)?;
        let labels = formula.term_labels();
        let mut circuit = Circuit {
            shape,
            ops: Vec::with_capacity(formula.node_count()),
            edges: Vec::new(),
            terms: Vec::new(),
            labels,
        };
        for term in formula.terms() {
            let node = circuit.push(term);
            let label = circuit.labels.iter().position(|l| l == term.label()).unwrap() as u32;
            circuit.terms.push((node, label));
        }
        Ok(circuit)
    }

    fn push(&mut self, f: &Formula) -> u32 {
        let op = match f.node() {
            Node::Atom(Atom::Class { i, j, class }) => Op::Class(self.shape.index(*i, *j, *class) as u32),
            Node::Atom(Atom::Equal { a, b }) => {
                Op::Equal(self.shape.index(a.0, a.1, 0) as u32, self.shape.index(b.0, b.1, 0) as u32)
            }
            Node::Not(c) => Op::Not(self.push(c)),
            Node::And(cs) | Node::Or(cs) => {
                let kids: Vec<Edge> = cs.iter().map(|c| Edge { node: self.push(c), negated: false }).collect();
                let start = self.edges.len() as u32;
                self.edges.extend(kids);
                let len = cs.len() as u32;
                if matches!(f.node(), Node::And(_)) {
                    Op::And { start, len }
                } else {
                    Op::Or { start, len }
                }
            }
            Node::Implies(a, b) => {
                let premise = Edge { node: self.push(a), negated: true };
                let conclusion = Edge { node: self.push(b), negated: false };
                let start = self.edges.len() as u32;
                self.edges.extend([premise, conclusion]);
                Op::Or { start, len: 2 }
            }
        };
        self.ops.push(op);
        (self.ops.len() - 1) as u32
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Family labels of the top-level terms, in first-seen order.
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    #[inline]
    fn complement(u: f64, negated: bool) -> f64 {
        if negated {
            u
        } else {
            log1mexp_raw(u).max(LOG_EPS)
        }
    }

    /// Log-probability of every node, given per-pixel class log-probs.
    pub fn forward(&self, logp: &[f64]) -> Vec<f64> {
        debug_assert_eq!(logp.len(), self.shape.len());
        let classes = self.shape.classes;
        let mut values = vec![0.0; self.ops.len()];
        let mut scratch = vec![0.0; classes];
        for (n, op) in self.ops.iter().enumerate() {
            values[n] = match *op {
                Op::Class(k) => logp[k as usize],
                Op::Equal(a, b) => {
                    let (a, b) = (a as usize, b as usize);
                    for c in 0..classes {
                        scratch[c] = logp[a + c] + logp[b + c];
                    }
                    log_sum_exp(&scratch).min(0.0)
                }
                Op::Not(c) => log1mexp_raw(values[c as usize]).max(LOG_EPS),
                Op::And { start, len } => self.kids(start, len).iter().map(|e| values[e.node as usize]).sum(),
                Op::Or { start, len } => {
                    let s: f64 = self
                        .kids(start, len)
                        .iter()
                        .map(|e| Self::complement(values[e.node as usize], e.negated))
                        .sum();
                    log1mexp_raw(s).max(LOG_EPS)
                }
            };
        }
        values
    }

    /// Pulls node adjoints back to adjoints of the per-pixel class log-probs.
    ///
    /// `seeds` holds `dL/dv` for each top-level term.
    pub fn backward(&self, logp: &[f64], values: &[f64], seeds: &[f64]) -> Vec<f64> {
        let classes = self.shape.classes;
        let mut adj = vec![0.0; self.ops.len()];
        for (&(node, _), &s) in self.terms.iter().zip(seeds) {
            adj[node as usize] += s;
        }
        let mut out = vec![0.0; logp.len()];
        for n in (0..self.ops.len()).rev() {
            let g = adj[n];
            if g == 0.0 {
                continue;
            }
            let v = values[n];
            match self.ops[n] {
                Op::Class(k) => out[k as usize] += g,
                Op::Equal(a, b) => {
                    let (a, b) = (a as usize, b as usize);
                    for c in 0..classes {
                        let w = g * (logp[a + c] + logp[b + c] - v).exp();
                        out[a + c] += w;
                        out[b + c] += w;
                    }
                }
                Op::Not(c) => {
                    let u = values[c as usize];
                    let raw = log1mexp_raw(u);
                    if raw > LOG_EPS {
                        adj[c as usize] -= g * (u - raw).exp();
                    }
                }
                Op::And { start, len } => {
                    for e in self.kids(start, len) {
                        adj[e.node as usize] += g;
                    }
                }
                Op::Or { start, len } => {
                    let kids = self.kids(start, len);
                    let s: f64 = kids.iter().map(|e| Self::complement(values[e.node as usize], e.negated)).sum();
                    if log1mexp_raw(s) <= LOG_EPS {
                        continue;
                    }
                    // dv/ds = -e^{s - v}; ds/dq_k = 1
                    let gs = -g * (s - v).exp();
                    for e in kids {
                        let u = values[e.node as usize];
                        if e.negated {
                            adj[e.node as usize] += gs;
                        } else {
                            let q = log1mexp_raw(u);
                            if q > LOG_EPS {
                                adj[e.node as usize] -= gs * (u - q).exp();
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Log-probability per label (sum over that label's terms).
    pub fn label_values(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.labels.len()];
        for &(node, label) in &self.terms {
            out[label as usize] += values[node as usize];
        }
        out
    }

    /// Discrete satisfaction per label on a label map.
    pub fn satisfied(&self, labels: &LabelMap) -> Vec<bool> {
        let classes = self.shape.classes;
        let flat = labels.as_slice();
        let mut truth = vec![false; self.ops.len()];
        for (n, op) in self.ops.iter().enumerate() {
            truth[n] = match *op {
                Op::Class(k) => {
                    let k = k as usize;
                    flat[k / classes] as usize == k % classes
                }
                Op::Equal(a, b) => flat[a as usize / classes] == flat[b as usize / classes],
                Op::Not(c) => !truth[c as usize],
                Op::And { start, len } => self.kids(start, len).iter().all(|e| truth[e.node as usize]),
                Op::Or { start, len } => self.kids(start, len).iter().any(|e| truth[e.node as usize] != e.negated),
            };
        }
        let mut out = vec![true; self.labels.len()];
        for &(node, label) in &self.terms {
            out[label as usize] &= truth[node as usize];
        }
        out
    }

    #[inline]
    fn kids(&self, start: u32, len: u32) -> &[Edge] {
        &self.edges[start as usize..(start + len) as usize]
    }
}

/// Result of fuzzy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub log_prob: LogProb,
    pub per_label_log_prob: BTreeMap<String, LogProb>,
}

/// `dL/dlogit` for every logit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradField {
    shape: Shape,
    data: Vec<f64>,
}

impl GradField {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.shape.index(i, j, c)]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Affine correction for a constraint the ground truth may violate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    pub beta: f64,
}

impl Calibration {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) || !(0.0..=1.0).contains(&alpha) || alpha <= beta {
            return Err(Error::invalid(format!(
                "calibration needs 0 <= beta < alpha <= 1, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// `ln((alpha - beta) e^lp + beta)` and its derivative in `lp`.
    fn log_prob(&self, lp: f64) -> (f64, f64) {
        let a = (self.alpha - self.beta).ln() + lp;
        let b = self.beta.ln();
        let v = if b == f64::NEG_INFINITY { a } else { log_sum_exp(&[a, b]) };
        (v, (a - v).exp())
    }
}

/// Loss totals and discrete satisfaction for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub per_constraint: BTreeMap<String, f64>,
    pub satisfied: BTreeMap<String, bool>,
}

/// A compiled formula plus per-label weights and calibrations: the loss that
/// refinement minimizes.
#[derive(Debug, Clone)]
pub struct Objective {
    circuit: Circuit,
    weights: Vec<f64>,
    calibrations: Vec<Option<Calibration>>,
}

/// Loss value, per-label losses and gradient at one point.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub per_label: Vec<f64>,
    pub grad: GradField,
}

impl Objective {
    pub fn new(formula: &Formula, shape: Shape) -> Result<Self> {
        let circuit = Circuit::compile(formula, shape)?;
        let n = circuit.labels().len();
        Ok(Self { circuit, weights: vec![1.0; n], calibrations: vec![None; n] })
    }

    /// Sets weights for the named labels; unnamed labels keep weight 1.
    pub fn with_weights(mut self, weights: &BTreeMap<String, f64>) -> Result<Self> {
        for (name, &w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("weight for `{name}` must be >= 0, got {w}")));
            }
            if let Some(k) = self.circuit.labels().iter().position(|l| l.as_ref() == name) {
                self.weights[k] = w;
            }
        }
        Ok(self)
    }

    pub fn with_calibrations(mut self, cal: &BTreeMap<String, Calibration>) -> Self {
        for (name, c) in cal {
            if let Some(k) = self.circuit.labels().iter().position(|l| l.as_ref() == name) {
                self.calibrations[k] = Some(*c);
            }
        }
        self
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn labels(&self) -> &[Label] {
        self.circuit.labels()
    }

    fn check_shape(&self, shape: Shape) -> Result<()> {
        if shape != self.circuit.shape() {
            return Err(Error::shape(format!(
                "objective compiled for {:?}, got logits of {:?}",
                self.circuit.shape(),
                shape
            )));
        }
        Ok(())
    }

    /// Per-label losses: `-ln p`, or the calibrated `-ln((a - b) p + b)`.
    fn label_losses(&self, label_lp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut losses = Vec::with_capacity(label_lp.len());
        let mut dloss = Vec::with_capacity(label_lp.len());
        for (k, &lp) in label_lp.iter().enumerate() {
            match self.calibrations[k] {
                None => {
                    losses.push(-lp);
                    dloss.push(-1.0);
                }
                Some(c) => {
                    let (v, d) = c.log_prob(lp);
                    losses.push(-v);
                    dloss.push(-d);
                }
            }
        }
        (losses, dloss)
    }

    pub fn loss(&self, logits: &LogitField) -> Result<(f64, Vec<f64>)> {
        self.check_shape(logits.shape())?;
        let logp = log_softmax_data(logits);
        let values = self.circuit.forward(&logp);
        let (losses, _) = self.label_losses(&self.circuit.label_values(&values));
        let total = losses.iter().zip(&self.weights).map(|(l, w)| l * w).sum();
        Ok((total, losses))
    }

    /// Weighted loss and its gradient in one forward and one backward sweep.
    pub fn loss_and_grad(&self, logits: &LogitField) -> Result<LossAndGrad> {
        self.check_shape(logits.shape())?;
        let shape = logits.shape();
        let logp = log_softmax_data(logits);
        let values = self.circuit.forward(&logp);
        let (losses, dloss) = self.label_losses(&self.circuit.label_values(&values));
        let loss = losses.iter().zip(&self.weights).map(|(l, w)| l * w).sum();
        let seeds: Vec<f64> =
            self.circuit.terms.iter().map(|&(_, k)| self.weights[k as usize] * dloss[k as usize]).collect();
        let adj = self.circuit.backward(&logp, &values, &seeds);
        // Through log-softmax: dL/dz_k = a_k - p_k * sum_c a_c.
        let mut grad = vec![0.0; adj.len()];
        for ((g, a), lp) in grad
            .chunks_exact_mut(shape.classes)
            .zip(adj.chunks_exact(shape.classes))
            .zip(logp.chunks_exact(shape.classes))
        {
            let total: f64 = a.iter().sum();
            for c in 0..shape.classes {
                g[c] = a[c] - lp[c].exp() * total;
            }
        }
        Ok(LossAndGrad { loss, per_label: losses, grad: GradField { shape, data: grad } })
    }

    /// [`Objective::loss_and_grad`] on a flat row-major `(h, w, c)` buffer,
    /// for callers that hold logits in their own tensor type.
    pub fn loss_and_grad_flat(&self, logits: &[f64]) -> Result<(f64, Vec<f64>)> {
        let shape = self.circuit.shape();
        if logits.len() != shape.len() {
            return Err(Error::shape(format!(
                "expected {} logits for {}x{}x{}, got {}",
                shape.len(),
                shape.height,
                shape.width,
                shape.classes,
                logits.len()
            )));
        }
        let lg = self.loss_and_grad(&LogitField::new(shape, logits.to_vec())?)?;
        Ok((lg.loss, lg.grad.into_data()))
    }

    /// Loss report with discrete satisfaction of the argmax mask.
    pub fn report(&self, logits: &LogitField, mask: &LabelMap) -> Result<LossReport> {
        let (total, losses) = self.loss(logits)?;
        let sat = self.circuit.satisfied(mask);
        let names = self.labels().iter().map(|l| l.to_string());
        Ok(LossReport {
            total,
            per_constraint: names.clone().zip(losses).collect(),
            satisfied: names.zip(sat).collect(),
        })
    }
}

/// `ln p(formula)` under product t-norm semantics.
pub fn eval_fuzzy(formula: &Formula, probs: &ProbField) -> Result<EvalResult> {
    let circuit = Circuit::compile(formula, probs.shape())?;
    let values = circuit.forward(&probs.log_data());
    Ok(eval_result(&circuit, &values))
}

fn eval_result(circuit: &Circuit, values: &[f64]) -> EvalResult {
    let per_label = circuit.label_values(values);
    let total: f64 = per_label.iter().sum();
    EvalResult {
        log_prob: LogProb::new(total.min(0.0)).expect("sum of log-probabilities"),
        per_label_log_prob: circuit
            .labels()
            .iter()
            .zip(per_label)
            .map(|(l, v)| (l.to_string(), LogProb::new(v.min(0.0)).unwrap()))
            .collect(),
    }
}

/// Semantic loss `-ln p(formula | logits)` with per-constraint losses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticLoss {
    pub loss: f64,
    pub per_constraint: BTreeMap<String, f64>,
}

pub fn semantic_loss(formula: &Formula, logits: &LogitField) -> Result<SemanticLoss> {
    logits.check_finite()?;
    let obj = Objective::new(formula, logits.shape())?;
    let (loss, per) = obj.loss(logits)?;
    Ok(SemanticLoss { loss, per_constraint: obj.labels().iter().map(|l| l.to_string()).zip(per).collect() })
}

pub fn grad_semantic_loss(formula: &Formula, logits: &LogitField) -> Result<GradField> {
    logits.check_finite()?;
    Ok(Objective::new(formula, logits.shape())?.loss_and_grad(logits)?.grad)
}

/// `-ln((alpha - beta) p(formula) + beta)`.
pub fn calibrated_loss(formula: &Formula, logits: &LogitField, alpha: f64, beta: f64) -> Result<f64> {
    let cal = Calibration::new(alpha, beta)?;
    let lp = -semantic_loss(formula, logits)?.loss;
    Ok(-cal.log_prob(lp).0)
}

/// A Monte-Carlo frequency with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
    pub samples: u64,
}

impl Estimate {
    fn from_counts(hits: u64, samples: u64) -> Option<Self> {
        (samples > 0).then(|| {
            let value = hits as f64 / samples as f64;
            Estimate { value, std_err: (value * (1.0 - value) / samples as f64).sqrt(), samples }
        })
    }
}

/// Sampled `alpha = p(gt | formula holds)` and `beta = p(gt | formula fails)`;
/// `None` when a partition received no samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaBetaEstimate {
    pub alpha: Option<Estimate>,
    pub beta: Option<Estimate>,
}

pub const DEFAULT_CALIBRATION_SAMPLES: usize = 10_000;

/// Draws one label map from independent per-pixel categoricals.
pub fn sample_labels(probs: &ProbField, rng: &mut impl Rng) -> LabelMap {
    let shape = probs.shape();
    let labels = probs
        .data()
        .chunks_exact(shape.classes)
        .map(|px| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (c, &p) in px.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c as u8;
                }
            }
            // rounding left u above the cumulative sum; take the last class with mass
            px.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u8
        })
        .collect();
    LabelMap::new(shape.height, shape.width, labels).unwrap()
}

/// Monte-Carlo estimate of `(alpha, beta)` pooled over a validation set.
pub fn estimate_alpha_beta(
    formula: &Formula,
    gt_maps: &[LabelMap],
    fields: &[ProbField],
    samples_per_image: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AlphaBetaEstimate> {
    if gt_maps.is_empty() || gt_maps.len() != fields.len() {
        return Err(Error::invalid(format!(
            "need aligned non-empty lists, got {} ground-truth maps and {} fields",
            gt_maps.len(),
            fields.len()
        )));
    }
    let (mut sat, mut sat_hit, mut unsat, mut unsat_hit) = (0u64, 0u64, 0u64, 0u64);
    for (gt, field) in gt_maps.iter().zip(fields) {
        let circuit = Circuit::compile(formula, field.shape())?;
        if gt.height() != field.shape().height || gt.width() != field.shape().width {
            return Err(Error::shape("ground truth and field dimensions differ"));
        }
        for _ in 0..samples_per_image {
            let y = sample_labels(field, rng);
            let hit = u64::from(&y == gt);
            if circuit.satisfied(&y).iter().all(|&s| s) {
                sat += 1;
                sat_hit += hit;
            } else {
                unsat += 1;
                unsat_hit += hit;
            }
        }
    }
    Ok(AlphaBetaEstimate { alpha: Estimate::from_counts(sat_hit, sat), beta: Estimate::from_counts(unsat_hit, unsat) })
}

/// Convenience: softmax then [`eval_fuzzy`].
pub fn eval_fuzzy_logits(formula: &Formula, logits: &LogitField) -> Result<EvalResult> {
    eval_fuzzy(formula, &softmax_field(logits)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::*;
    use crate::formula::{conjoin, Family};

    fn lbl(s: &str) -> Label {
        Label::from(s)
    }

    fn probs(h: usize, w: usize, c: usize, data: &[f64]) -> ProbField {
        ProbField::new(Shape::new(h, w, c), data.to_vec()).unwrap()
    }

    #[test]
    fn single_atom() {
        let f = Formula::class_atom(&lbl("x"), 0, 0, 0);
        let r = eval_fuzzy(&f, &probs(1, 1, 2, &[0.8, 0.2])).unwrap();
        assert!((r.log_prob.value() - 0.8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn independent_conjunction() {
        let l = lbl("x");
        let f = Formula::and(&l, vec![Formula::class_atom(&l, 0, 0, 0), Formula::class_atom(&l, 0, 1, 0)]);
        let r = eval_fuzzy(&f, &probs(1, 2, 2, &[0.8, 0.2, 0.5, 0.5])).unwrap();
        assert!((r.log_prob.value() - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tight_box_gap_value() {
        let b = BoundingBox::new(0, 0, 1, 1, 1).unwrap();
        let r = eval_fuzzy(&build_bbox_tight(&b), &probs(2, 2, 2, &[0.5; 8])).unwrap();
        assert!((r.log_prob.prob() - 0.31640625).abs() < 1e-12);
    }

    #[test]
    fn equality_atom_is_inner_product() {
        let l = lbl("x");
        let f = Formula::eq_atom(&l, (0, 0), (0, 1)).unwrap();
        let p = probs(1, 2, 3, &[0.2, 0.3, 0.5, 0.6, 0.1, 0.3]);
        let v = eval_fuzzy(&f, &p).unwrap().log_prob.prob();
        assert!((v - (0.12 + 0.03 + 0.15)).abs() < 1e-15);
    }

    #[test]
    fn implies_lowered_to_or() {
        let l = lbl("x");
        let a = Formula::class_atom(&l, 0, 0, 1);
        let b = Formula::class_atom(&l, 0, 1, 1);
        let p = probs(1, 2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let v = eval_fuzzy(&Formula::implies(&l, a, b), &p).unwrap().log_prob.prob();
        // 1 - p(a) (1 - p(b))
        assert!((v - (1.0 - 0.7 * 0.6)).abs() < 1e-14);
    }

    #[test]
    fn out_of_bounds_atom_rejected() {
        let f = Formula::class_atom(&lbl("x"), 3, 0, 0);
        assert!(matches!(eval_fuzzy(&f, &probs(1, 1, 2, &[0.5, 0.5])), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn per_label_sums_to_total() {
        let s = build_scribble(&Scribble::new(vec![(0, 0), (1, 1)], 1).unwrap());
        let b = build_bbox_tight(&BoundingBox::new(0, 0, 1, 1, 1).unwrap());
        let f = conjoin(vec![s, b]).unwrap();
        let p = probs(2, 2, 2, &[0.3, 0.7, 0.6, 0.4, 0.5, 0.5, 0.1, 0.9]);
        let r = eval_fuzzy(&f, &p).unwrap();
        let sum: f64 = r.per_label_log_prob.values().map(|v| v.value()).sum();
        assert!((sum - r.log_prob.value()).abs() < 1e-12);
        assert_eq!(r.per_label_log_prob.len(), 2);
    }

    #[test]
    fn single_atom_gradient() {
        let f = Formula::class_atom(&lbl("x"), 0, 0, 0);
        let logits = LogitField::zeros(Shape::new(1, 1, 2)).unwrap();
        let g = grad_semantic_loss(&f, &logits).unwrap();
        assert!((g.get(0, 0, 0) + 0.5).abs() < 1e-15);
        assert!((g.get(0, 0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn untouched_pixel_has_zero_gradient() {
        let f = build_neighborhood(1, 2).unwrap();
        let f = conjoin(vec![f, Formula::class_atom(&Family::Scribbles.label(), 1, 1, 0)]).unwrap();
        let f = Formula::and(&lbl("x"), vec![f]);
        let shape = Shape::new(2, 2, 3);
        let logits = LogitField::new(shape, (0..12).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let g = grad_semantic_loss(&f, &logits).unwrap();
        for c in 0..3 {
            assert_eq!(g.get(1, 0, c), 0.0);
        }
    }

    #[test]
    fn empty_conjunction_is_free() {
        let f = Formula::truth(&lbl("x"));
        let logits = LogitField::new(Shape::new(1, 2, 2), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(semantic_loss(&f, &logits).unwrap().loss, 0.0);
        assert!(grad_semantic_loss(&f, &logits).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn calibration_cases() {
        let f = build_bbox_tight(&BoundingBox::new(0, 0, 1, 1, 1).unwrap());
        let logits = LogitField::new(Shape::new(2, 2, 2), vec![0.1, 0.4, -1.0, 2.0, 0.0, 0.0, 1.5, -0.5]).unwrap();
        let sl = semantic_loss(&f, &logits).unwrap().loss;
        assert!((calibrated_loss(&f, &logits, 1.0, 0.0).unwrap() - sl).abs() < 1e-12);
        assert!((calibrated_loss(&f, &logits, 0.5, 0.0).unwrap() - (sl + 2f64.ln())).abs() < 1e-12);
        assert!(calibrated_loss(&f, &logits, 0.3, 0.3).is_err());
        assert!(calibrated_loss(&f, &logits, 0.2, 0.5).is_err());
        let cal = Calibration::new(0.9, 0.1).unwrap();
        assert!((-cal.log_prob(0.6f64.ln()).0 - -(0.58f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn weights_scale_label_losses() {
        let s = build_scribble(&Scribble::new(vec![(0, 0)], 1).unwrap());
        let n = build_neighborhood(1, 2).unwrap();
        let f = conjoin(vec![s, n]).unwrap();
        let shape = Shape::new(1, 2, 2);
        let logits = LogitField::new(shape, vec![0.3, -0.2, 1.0, 0.1]).unwrap();
        let base = Objective::new(&f, shape).unwrap();
        let (total, per) = base.loss(&logits).unwrap();
        assert!((total - per.iter().sum::<f64>()).abs() < 1e-15);
        let weights = BTreeMap::from([("neighborhood".to_string(), 0.0)]);
        let weighted = Objective::new(&f, shape).unwrap().with_weights(&weights).unwrap();
        assert!((weighted.loss(&logits).unwrap().0 - per[0]).abs() < 1e-15);
        let bad = BTreeMap::from([("neighborhood".to_string(), -1.0)]);
        assert!(Objective::new(&f, shape).unwrap().with_weights(&bad).is_err());
    }

    #[test]
    fn circuit_discrete_matches_tree() {
        let sp = SuperpixelMap::new(2, 3, vec![0, 0, 1, 0, 1, 1]).unwrap();
        let b = BoundingBox::new(0, 0, 1, 2, 1).unwrap();
        let f = conjoin(vec![
            build_fill(2, 3),
            build_neighborhood(2, 3).unwrap(),
            build_borders(&sp),
            build_bbox_tight(&b),
            build_corners(&b).unwrap(),
        ])
        .unwrap();
        let circuit = Circuit::compile(&f, Shape::new(2, 3, 2)).unwrap();
        for code in 0..64u32 {
            let m = LabelMap::from_fn(2, 3, |i, j| ((code >> (i * 3 + j)) & 1) as u8).unwrap();
            let by_term: Vec<bool> = f.terms().iter().map(|t| t.holds(&m)).collect();
            assert_eq!(circuit.satisfied(&m), by_term);
        }
    }

    #[test]
    fn estimate_on_deterministic_field() {
        use rand::SeedableRng;
        let gt = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let f = build_full_supervision(&gt, 2).unwrap();
        let field = ProbField::one_hot(&gt, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est =
            estimate_alpha_beta(&f, std::slice::from_ref(&gt), std::slice::from_ref(&field), 500, &mut rng).unwrap();
        assert_eq!(est.alpha.unwrap().value, 1.0);
        assert!(est.beta.is_none());
        let truth = Formula::truth(&lbl("x"));
        let est = estimate_alpha_beta(&truth, std::slice::from_ref(&gt), std::slice::from_ref(&field), 100, &mut rng)
            .unwrap();
        assert!(est.beta.is_none());
        assert!(estimate_alpha_beta(&truth, &[gt], &[], 100, &mut rng).is_err());
    }
}
