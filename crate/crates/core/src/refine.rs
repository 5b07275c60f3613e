//! Pseudo-label refinement: Adam on a logit field under the constraint loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::fuzzy::Objective;
use crate::grid::{LabelMap, LogitField, ProbField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Per-family loss weights; families not listed weigh 1.
    pub constraint_weights: BTreeMap<String, f64>,
    pub log_every: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            constraint_weights: BTreeMap::new(),
            log_every: 10,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("refinement needs at least one step"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
        {
            return Err(Error::invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if let Some((k, w)) = self.constraint_weights.iter().find(|(_, w)| w.is_nan() || **w < 0.0) {
            return Err(Error::invalid(format!("weight for `{k}` must be >= 0, got {w}")));
        }
        Ok(())
    }
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One logged step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub per_constraint: BTreeMap<String, f64>,
    pub satisfaction: BTreeMap<String, bool>,
}

/// Loss at every step plus periodic records. Records are taken at steps
/// `0, log_every, 2 * log_every, ...` and always at the final state
/// (`step == steps`).
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RefineTrace {
    /// Total loss before each update; `steps` entries.
    pub losses: Vec<f64>,
    pub records: Vec<TraceRecord>,
}

impl RefineTrace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Per-pixel argmax; ties go to the lowest class.
pub fn extract_mask(logits: &LogitField) -> LabelMap {
    let shape = logits.shape();
    let labels = logits
        .data()
        .chunks_exact(shape.classes)
        .map(|px| {
            let mut best = 0;
            for c in 1..px.len() {
                if px[c] > px[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(shape.height, shape.width, labels).unwrap()
}

/// `ln(max(p, floor))` per entry.
pub fn init_from_prob(prob: &ProbField, floor: f64) -> Result<LogitField> {
    if !(floor > 0.0 && floor <= 0.1) {
        return Err(Error::invalid(format!("floor must be in (0, 0.1], got {floor}")));
    }
    LogitField::new(prob.shape(), prob.data().iter().map(|&p| p.max(floor).ln()).collect())
}

fn record(objective: &Objective, logits: &LogitField, step: usize) -> Result<TraceRecord> {
    let report = objective.report(logits, &extract_mask(logits))?;
    Ok(TraceRecord { step, loss: report.total, per_constraint: report.per_constraint, satisfaction: report.satisfied })
}

/// Runs `cfg.steps` Adam updates of the logits against a compiled objective.
pub fn refine_objective(
    init: &LogitField,
    objective: &Objective,
    cfg: &RefineConfig,
) -> Result<(LogitField, RefineTrace)> {
    cfg.validate()?;
    init.check_finite()?;
    let mut logits = init.clone();
    let mut adam = Adam::new(init.data().len(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut trace = RefineTrace { losses: Vec::with_capacity(cfg.steps), records: Vec::new() };
    for step in 0..cfg.steps {
        let lg = objective.loss_and_grad(&logits)?;
        if !lg.loss.is_finite() || lg.grad.data().iter().any(|g| !g.is_finite()) {
            let names: Vec<String> = objective.labels().iter().map(|l| l.to_string()).collect();
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("loss {} with per-constraint losses {:?} for {:?}", lg.loss, lg.per_label, names),
            });
        }
        trace.losses.push(lg.loss);
        if step % cfg.log_every == 0 {
            trace.records.push(record(objective, &logits, step)?);
        }
        adam.step(logits.data_mut(), lg.grad.data());
    }
    trace.records.push(record(objective, &logits, cfg.steps)?);
    if !trace.records.last().unwrap().loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: cfg.steps, detail: "final loss".into() });
    }
    logits.check_finite()?;
    Ok((logits, trace))
}

/// Compiles `formula` with the configured weights and refines `init`.
pub fn refine(init: &LogitField, formula: &Formula, cfg: &RefineConfig) -> Result<(LogitField, RefineTrace)> {
    cfg.validate()?;
    let objective = Objective::new(formula, init.shape())?.with_weights(&cfg.constraint_weights)?;
    refine_objective(init, &objective, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{Formula, Label};
    use crate::grid::{softmax_field, Shape};

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn single_atom_driven_up() {
        let f = Formula::class_atom(&Label::from("scribbles"), 0, 0, 1);
        let init = LogitField::zeros(Shape::new(1, 1, 2)).unwrap();
        let cfg = RefineConfig { learning_rate: 5e-2, steps: 500, ..RefineConfig::default() };
        let (out, trace) = refine(&init, &f, &cfg).unwrap();
        let p1 = softmax_field(&out).unwrap().get(0, 0, 1);
        assert!(p1 > 0.99, "{p1}");
        for w in trace.losses[10..].windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
        assert_eq!(trace.losses.len(), 500);
        assert_eq!(trace.records.len(), 51);
        assert_eq!(trace.last().unwrap().step, 500);
        assert!(trace.last().unwrap().satisfaction["scribbles"]);
    }

    #[test]
    fn empty_formula_leaves_logits() {
        let f = Formula::truth(&Label::from("x"));
        let init = LogitField::new(Shape::new(2, 1, 3), vec![0.1, 0.2, 0.3, -1.0, 0.0, 1.0]).unwrap();
        let (out, _) =
            refine(&init, &f, &RefineConfig { learning_rate: 0.5, steps: 20, ..Default::default() }).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn config_validation() {
        let bad = [
            RefineConfig { learning_rate: 0.0, ..Default::default() },
            RefineConfig { steps: 0, ..Default::default() },
            RefineConfig { log_every: 0, ..Default::default() },
            RefineConfig { constraint_weights: BTreeMap::from([("x".into(), -1.0)]), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert_eq!(RefineConfig::default().learning_rate, 1e-4);
    }

    #[test]
    fn argmax_ties_go_low() {
        let logits = LogitField::new(Shape::new(1, 3, 2), vec![2.0, 0.0, 0.0, 0.0, -1.0, 3.0]).unwrap();
        assert_eq!(extract_mask(&logits).as_slice(), &[0, 0, 1]);
    }

    #[test]
    fn init_round_trips() {
        let p = ProbField::new(Shape::new(1, 2, 2), vec![0.5, 0.5, 1.0, 0.0]).unwrap();
        let logits = init_from_prob(&p, 1e-6).unwrap();
        assert_eq!(logits.get(0, 0, 0), 0.5f64.ln());
        let q = softmax_field(&logits).unwrap();
        assert_eq!(q.get(0, 0, 0), 0.5);
        for (a, b) in p.data().iter().zip(q.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert!(init_from_prob(&p, 0.0).is_err());
        assert!(init_from_prob(&p, 0.2).is_err());
    }
}
