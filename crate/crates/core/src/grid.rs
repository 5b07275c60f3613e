//! Dense per-pixel fields and the log-space scalar helpers every evaluator
//! shares.
//!
//! All fields use a row-major `(i, j, c)` layout: row outermost, class
//! innermost. The layout is fixed because the PFT file format depends on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking a log.
pub const PROB_EPS: f64 = 1e-12;

/// `ln(PROB_EPS)`.
pub const LOG_EPS: f64 = -27.631021115928547;

/// Height, width and class count of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, classes: usize) -> Self {
        Self { height, width, classes }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.width + j) * self.classes + c
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.height && j < self.width
    }
}

fn check_shape(shape: Shape, len: usize) -> Result<()> {
    if shape.height == 0 || shape.width == 0 {
        return Err(Error::shape(format!("field must be non-empty, got {}x{}", shape.height, shape.width)));
    }
    if shape.classes < 2 {
        return Err(Error::shape(format!("need at least 2 classes, got {}", shape.classes)));
    }
    if len != shape.len() {
        return Err(Error::shape(format!(
            "data length {} does not match {}x{}x{} = {}",
            len,
            shape.height,
            shape.width,
            shape.classes,
            shape.len()
        )));
    }
    Ok(())
}

/// Unnormalized class scores; the learnable parameters of refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    shape: Shape,
    data: Vec<f64>,
}

impl LogitField {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        let field = Self { shape, data };
        field.check_finite()?;
        Ok(field)
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for optimizers. Callers must keep the entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.shape.index(i, j, c)]
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = self.shape.index(i, j, 0);
        &self.data[start..start + self.shape.classes]
    }

    /// Returns the first non-finite entry as an error naming its pixel.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => {
                let c = k % self.shape.classes;
                let p = k / self.shape.classes;
                Err(Error::NonFinite { i: p / self.shape.width, j: p % self.shape.width, c, value: self.data[k] })
            }
        }
    }
}

/// Per-pixel categorical distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    shape: Shape,
    data: Vec<f64>,
}

impl ProbField {
    /// Tolerance on per-pixel normalization.
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        for (p, px) in data.chunks_exact(shape.classes).enumerate() {
            let (i, j) = (p / shape.width, p % shape.width);
            for (c, &v) in px.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "probability {v} outside [0, 1] at pixel ({i}, {j}), class {c}"
                    )));
                }
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > Self::SUM_TOL {
                return Err(Error::invalid(format!("probabilities at pixel ({i}, {j}) sum to {sum}")));
            }
        }
        Ok(Self { shape, data })
    }

    /// A deterministic field: all mass on the given label at every pixel.
    pub fn one_hot(labels: &LabelMap, classes: usize) -> Result<Self> {
        let shape = Shape::new(labels.height(), labels.width(), classes);
        let mut data = vec![0.0; shape.len()];
        for (p, &l) in labels.as_slice().iter().enumerate() {
            let l = l as usize;
            if l >= classes {
                return Err(Error::invalid(format!("label {l} exceeds class count {classes}")));
            }
            data[p * classes + l] = 1.0;
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.shape.index(i, j, c)]
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = self.shape.index(i, j, 0);
        &self.data[start..start + self.shape.classes]
    }

    /// Floored natural logs of every entry.
    pub fn log_data(&self) -> Vec<f64> {
        self.data.iter().map(|&p| clamp_log(p, PROB_EPS)).collect()
    }
}

/// A dense map of class indices (ground truth, predictions, samples).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("label map must be non-empty, got {height}x{width}")));
        }
        if labels.len() != height * width {
            return Err(Error::shape(format!("label count {} does not match {height}x{width}", labels.len())));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut labels = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                labels.push(f(i, j));
            }
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.labels[i * self.width + j] as usize
    }

    pub fn set(&mut self, i: usize, j: usize, label: u8) {
        self.labels[i * self.width + j] = label;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Rejects any label `>= classes`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l as usize >= classes) {
            None => Ok(()),
            Some(p) => Err(Error::invalid(format!(
                "label {} at pixel ({}, {}) exceeds class count {classes}",
                self.labels[p],
                p / self.width,
                p % self.width
            ))),
        }
    }
}

/// A natural-log probability: `value <= 0`, with `-inf` allowed.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(0.0);
    pub const NEG_INFINITY: LogProb = LogProb(f64::NEG_INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value > 0.0 {
            return Err(Error::invalid(format!("log-probability must be <= 0, got {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }
}

/// `ln(1 - e^x)` for `x <= 0`, switching between the `expm1` and `log1p`
/// forms at `-ln 2` so neither branch cancels.
#[inline]
pub fn log1mexp_raw(x: f64) -> f64 {
    debug_assert!(x.is_nan() || x <= 0.0, "log1mexp of positive {x}");
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Log-probability of the complement event.
pub fn log1mexp(x: LogProb) -> LogProb {
    LogProb(log1mexp_raw(x.0))
}

/// `ln(max(p, eps))`.
#[inline]
pub fn clamp_log(p: f64, eps: f64) -> f64 {
    p.max(eps).ln()
}

/// Log-probability with the default floor.
pub fn clamp_log_prob(p: f64) -> LogProb {
    LogProb(clamp_log(p, PROB_EPS).min(0.0))
}

/// Stable `ln(sum(exp(xs)))`; `-inf` for an empty or all-`-inf` slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-pixel log-softmax of a logit field, same layout.
pub fn log_softmax_data(logits: &LogitField) -> Vec<f64> {
    let classes = logits.shape().classes;
    let mut out = Vec::with_capacity(logits.data().len());
    for px in logits.data().chunks_exact(classes) {
        let lse = log_sum_exp(px);
        out.extend(px.iter().map(|&z| z - lse));
    }
    out
}

/// Per-pixel softmax.
pub fn softmax_field(logits: &LogitField) -> Result<ProbField> {
    logits.check_finite()?;
    let shape = logits.shape();
    let mut data = Vec::with_capacity(shape.len());
    for px in logits.data().chunks_exact(shape.classes) {
        let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        data.extend(px.iter().map(|&z| (z - max).exp()));
        let sum: f64 = data[start..].iter().sum();
        data[start..].iter_mut().for_each(|v| *v /= sum);
    }
    ProbField::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(h: usize, w: usize, c: usize, data: &[f64]) -> LogitField {
        LogitField::new(Shape::new(h, w, c), data.to_vec()).unwrap()
    }

    #[test]
    fn log_eps_matches_floor() {
        assert_eq!(LOG_EPS, PROB_EPS.ln());
    }

    #[test]
    fn softmax_symmetric_pair() {
        let p = softmax_field(&field(1, 1, 2, &[0.0, 0.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_two_zero() {
        let p = softmax_field(&field(1, 1, 2, &[2.0, 0.0])).unwrap();
        let e2 = 2f64.exp();
        assert!((p.get(0, 0, 0) - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p.get(0, 0, 1) - 1.0 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p.get(0, 0, 0) - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn softmax_shift_by_seven() {
        let base = [0.3, -1.2, 2.5, 0.0, 4.0, -3.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 7.0).collect();
        let a = softmax_field(&field(1, 2, 3, &base)).unwrap();
        let b = softmax_field(&field(1, 2, 3, &shifted)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_logit_names_pixel() {
        let mut f = LogitField::zeros(Shape::new(2, 3, 2)).unwrap();
        f.data_mut()[Shape::new(2, 3, 2).index(1, 2, 1)] = f64::NAN;
        match softmax_field(&f) {
            Err(Error::NonFinite { i: 1, j: 2, c: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(LogitField::new(Shape::new(1, 1, 2), vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(LogitField::new(Shape::new(1, 1, 1), vec![0.0]).is_err());
        assert!(LogitField::new(Shape::new(2, 2, 2), vec![0.0; 7]).is_err());
        assert!(ProbField::new(Shape::new(1, 1, 2), vec![0.6, 0.6]).is_err());
        assert!(ProbField::new(Shape::new(1, 1, 2), vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn log1mexp_fixed_points() {
        let half = LogProb::new(0.5f64.ln()).unwrap();
        assert!((log1mexp(half).value() - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(log1mexp(LogProb::NEG_INFINITY).value(), 0.0);
        assert_eq!(log1mexp(LogProb::ZERO).value(), f64::NEG_INFINITY);
        let v = log1mexp(LogProb::new(0.9f64.ln()).unwrap()).value();
        assert!((v - 0.1f64.ln()).abs() < 1e-12, "{v}");
        assert!(LogProb::new(1e-3).is_err());
    }

    #[test]
    fn clamp_log_cases() {
        assert_eq!(clamp_log(1.0, PROB_EPS), 0.0);
        assert_eq!(clamp_log(0.0, 1e-12), 1e-12f64.ln());
        assert_eq!(clamp_log(0.25, PROB_EPS), 0.25f64.ln());
    }

    proptest! {
        #[test]
        fn log1mexp_is_an_involution(x in -30.0f64..-1e-10) {
            let y = log1mexp_raw(log1mexp_raw(x));
            prop_assert!((y - x).abs() < 1e-10, "x={} y={}", x, y);
        }

        #[test]
        fn softmax_rows_normalized_and_shift_invariant(
            data in proptest::collection::vec(-20.0f64..20.0, 12),
            shifts in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let f = field(2, 2, 3, &data);
            let p = softmax_field(&f).unwrap();
            for px in p.data().chunks(3) {
                prop_assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let shifted: Vec<f64> = data.iter().enumerate().map(|(k, v)| v + shifts[k / 3]).collect();
            let q = softmax_field(&field(2, 2, 3, &shifted)).unwrap();
            for (a, b) in p.data().iter().zip(q.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_monotone_in_own_logit(data in proptest::collection::vec(-5.0f64..5.0, 3), bump in 0.01f64..3.0) {
            let p = softmax_field(&field(1, 1, 3, &data)).unwrap();
            let mut up = data.clone();
            up[1] += bump;
            let q = softmax_field(&field(1, 1, 3, &up)).unwrap();
            prop_assert!(q.get(0, 0, 1) > p.get(0, 0, 1));
            prop_assert!(q.get(0, 0, 0) < p.get(0, 0, 0));
        }
    }
}
