//! Propositional formulas over pixel atoms.
//!
//! Every node carries the label of the constraint family that produced it, so
//! losses and satisfaction can be attributed per family after conjoining.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, Shape};

/// Constraint-family tag shared by all nodes of one family.
pub type Label = Arc<str>;

/// Label given to the root of [`conjoin`].
pub const CONJUNCTION_LABEL: &str = "conjunction";

/// The constraint families the builders know how to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Fs,
    Scribbles,
    BboxShallow,
    Bbox,
    Background,
    Neighborhood,
    Fill,
    Borders,
    Corners,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Fs,
        Family::Scribbles,
        Family::BboxShallow,
        Family::Bbox,
        Family::Background,
        Family::Neighborhood,
        Family::Fill,
        Family::Borders,
        Family::Corners,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Fs => "fs",
            Family::Scribbles => "scribbles",
            Family::BboxShallow => "bbox_shallow",
            Family::Bbox => "bbox",
            Family::Background => "background",
            Family::Neighborhood => "neighborhood",
            Family::Fill => "fill",
            Family::Borders => "borders",
            Family::Corners => "corners",
        }
    }

    pub fn label(self) -> Label {
        Label::from(self.as_str())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown constraint family `{s}`")))
    }
}

/// A pixel has a class, or two pixels share a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atom {
    Class { i: usize, j: usize, class: usize },
    Equal { a: (usize, usize), b: (usize, usize) },
}

impl Atom {
    pub fn check(&self, shape: Shape) -> Result<()> {
        match *self {
            Atom::Class { i, j, class } => {
                if !shape.contains(i, j) || class >= shape.classes {
                    return Err(Error::OutOfBounds(format!(
                        "class atom Y[{i},{j}] = {class} on a {}x{}x{} grid",
                        shape.height, shape.width, shape.classes
                    )));
                }
            }
            Atom::Equal { a, b } => {
                if !shape.contains(a.0, a.1) || !shape.contains(b.0, b.1) {
                    return Err(Error::OutOfBounds(format!(
                        "equality atom Y[{},{}] = Y[{},{}] on a {}x{} grid",
                        a.0, a.1, b.0, b.1, shape.height, shape.width
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn holds(&self, labels: &LabelMap) -> bool {
        match *self {
            Atom::Class { i, j, class } => labels.get(i, j) == class,
            Atom::Equal { a, b } => labels.get(a.0, a.1) == labels.get(b.0, b.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Atom(Atom),
    Not(Box<Formula>),
    /// Empty conjunction is `true`.
    And(Vec<Formula>),
    /// Never empty.
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    label: Label,
    node: Node,
}

impl Formula {
    pub fn class_atom(label: &Label, i: usize, j: usize, class: usize) -> Self {
        Self { label: label.clone(), node: Node::Atom(Atom::Class { i, j, class }) }
    }

    pub fn eq_atom(label: &Label, a: (usize, usize), b: (usize, usize)) -> Result<Self> {
        if a == b {
            return Err(Error::invalid(format!("equality atom endpoints must differ, got ({}, {}) twice", a.0, a.1)));
        }
        Ok(Self { label: label.clone(), node: Node::Atom(Atom::Equal { a, b }) })
    }

    pub fn not(label: &Label, child: Formula) -> Self {
        Self { label: label.clone(), node: Node::Not(Box::new(child)) }
    }

    pub fn and(label: &Label, children: Vec<Formula>) -> Self {
        Self { label: label.clone(), node: Node::And(children) }
    }

    pub fn or(label: &Label, children: Vec<Formula>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::invalid(format!("empty disjunction in `{label}`")));
        }
        Ok(Self { label: label.clone(), node: Node::Or(children) })
    }

    pub fn implies(label: &Label, premise: Formula, conclusion: Formula) -> Self {
        Self { label: label.clone(), node: Node::Implies(Box::new(premise), Box::new(conclusion)) }
    }

    /// The trivially true formula (empty conjunction).
    pub fn truth(label: &Label) -> Self {
        Self::and(label, Vec::new())
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn is_truth(&self) -> bool {
        matches!(&self.node, Node::And(c) if c.is_empty())
    }

    /// Calls `f` on every atom in depth-first order.
    pub fn for_each_atom(&self, f: &mut impl FnMut(&Atom)) {
        match &self.node {
            Node::Atom(a) => f(a),
            Node::Not(c) => c.for_each_atom(f),
            Node::And(cs) | Node::Or(cs) => cs.iter().for_each(|c| c.for_each_atom(f)),
            Node::Implies(a, b) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
            }
        }
    }

    pub fn atom_count(&self) -> usize {
        let mut n = 0;
        self.for_each_atom(&mut |_| n += 1);
        n
    }

    pub fn node_count(&self) -> usize {
        1 + match &self.node {
            Node::Atom(_) => 0,
            Node::Not(c) => c.node_count(),
            Node::And(cs) | Node::Or(cs) => cs.iter().map(Formula::node_count).sum(),
            Node::Implies(a, b) => a.node_count() + b.node_count(),
        }
    }

    /// Rejects atoms outside `shape` and empty disjunctions.
    pub fn check(&self, shape: Shape) -> Result<()> {
        match &self.node {
            Node::Atom(a) => a.check(shape),
            Node::Not(c) => c.check(shape),
            Node::And(cs) => cs.iter().try_for_each(|c| c.check(shape)),
            Node::Or(cs) => {
                if cs.is_empty() {
                    return Err(Error::invalid(format!("empty disjunction in `{}`", self.label)));
                }
                cs.iter().try_for_each(|c| c.check(shape))
            }
            Node::Implies(a, b) => {
                a.check(shape)?;
                b.check(shape)
            }
        }
    }

    /// Standard propositional satisfaction of `labels`.
    pub fn holds(&self, labels: &LabelMap) -> bool {
        match &self.node {
            Node::Atom(a) => a.holds(labels),
            Node::Not(c) => !c.holds(labels),
            Node::And(cs) => cs.iter().all(|c| c.holds(labels)),
            Node::Or(cs) => cs.iter().any(|c| c.holds(labels)),
            Node::Implies(a, b) => !a.holds(labels) || b.holds(labels),
        }
    }

    /// The top-level terms a loss is attributed over: the children of a root
    /// conjunction, or the formula itself otherwise.
    pub fn terms(&self) -> Vec<&Formula> {
        match &self.node {
            Node::And(cs) if self.label.as_ref() == CONJUNCTION_LABEL => cs.iter().collect(),
            _ => vec![self],
        }
    }

    /// Distinct family labels of [`Formula::terms`], in first-seen order.
    pub fn term_labels(&self) -> Vec<Label> {
        let mut out: Vec<Label> = Vec::new();
        for t in self.terms() {
            if !out.iter().any(|l| l == &t.label) {
                out.push(t.label.clone());
            }
        }
        out
    }
}

/// Boolean satisfaction of `formula` by a label map.
pub fn eval_discrete(formula: &Formula, labels: &LabelMap) -> bool {
    formula.holds(labels)
}

/// Conjoins constraint formulas under a root whose children keep their
/// family labels.
pub fn conjoin(constraints: Vec<Formula>) -> Result<Formula> {
    if constraints.is_empty() {
        return Err(Error::invalid("cannot conjoin an empty list of constraints"));
    }
    Ok(Formula::and(&Label::from(CONJUNCTION_LABEL), constraints))
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        let op = match &self.node {
            Node::Atom(Atom::Class { .. }) => "class_atom",
            Node::Atom(Atom::Equal { .. }) => "eq_atom",
            Node::Not(_) => "not",
            Node::And(_) => "and",
            Node::Or(_) => "or",
            Node::Implies(..) => "implies",
        };
        map.serialize_entry("op", op)?;
        map.serialize_entry("label", self.label.as_ref())?;
        match &self.node {
            Node::Atom(Atom::Class { i, j, class }) => {
                map.serialize_entry("i", i)?;
                map.serialize_entry("j", j)?;
                map.serialize_entry("c", class)?;
            }
            Node::Atom(Atom::Equal { a, b }) => {
                map.serialize_entry("i", &a.0)?;
                map.serialize_entry("j", &a.1)?;
                map.serialize_entry("i2", &b.0)?;
                map.serialize_entry("j2", &b.1)?;
            }
            Node::Not(c) => map.serialize_entry("children", std::slice::from_ref(c.as_ref()))?,
            Node::And(cs) | Node::Or(cs) => map.serialize_entry("children", cs)?,
            Node::Implies(a, b) => map.serialize_entry("children", &[a.as_ref(), b.as_ref()])?,
        }
        map.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFormula {
    op: String,
    label: String,
    #[serde(default)]
    children: Vec<RawFormula>,
    i: Option<usize>,
    j: Option<usize>,
    c: Option<usize>,
    i2: Option<usize>,
    j2: Option<usize>,
}

impl RawFormula {
    fn into_formula(self) -> std::result::Result<Formula, String> {
        let label = Label::from(self.label.as_str());
        let field = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| format!("`{}` node in `{}` is missing `{name}`", self.op, self.label))
        };
        let arity = |n: usize| {
            if self.children.len() != n {
                Err(format!("`{}` node in `{}` needs {n} children, got {}", self.op, self.label, self.children.len()))
            } else {
                Ok(())
            }
        };
        match self.op.as_str() {
            "class_atom" => {
                arity(0)?;
                Ok(Formula::class_atom(&label, field(self.i, "i")?, field(self.j, "j")?, field(self.c, "c")?))
            }
            "eq_atom" => {
                arity(0)?;
                let a = (field(self.i, "i")?, field(self.j, "j")?);
                let b = (field(self.i2, "i2")?, field(self.j2, "j2")?);
                Formula::eq_atom(&label, a, b).map_err(|e| e.to_string())
            }
            "not" => {
                arity(1)?;
                let child = self.children.into_iter().next().unwrap().into_formula()?;
                Ok(Formula::not(&label, child))
            }
            "implies" => {
                arity(2)?;
                let mut it = self.children.into_iter();
                let a = it.next().unwrap().into_formula()?;
                let b = it.next().unwrap().into_formula()?;
                Ok(Formula::implies(&label, a, b))
            }
            "and" | "or" => {
                let children = self
                    .children
                    .into_iter()
                    .map(RawFormula::into_formula)
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                if self.op == "and" {
                    Ok(Formula::and(&label, children))
                } else {
                    Formula::or(&label, children).map_err(|e| e.to_string())
                }
            }
            other => Err(format!("unknown op `{other}`")),
        }
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        RawFormula::deserialize(deserializer)?.into_formula().map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lbl(s: &str) -> Label {
        Label::from(s)
    }

    #[test]
    fn empty_or_rejected() {
        assert!(Formula::or(&lbl("x"), vec![]).is_err());
        assert!(conjoin(vec![]).is_err());
    }

    #[test]
    fn eq_atom_needs_distinct_pixels() {
        assert!(Formula::eq_atom(&lbl("x"), (0, 1), (0, 1)).is_err());
    }

    #[test]
    fn bounds_checked() {
        let f = Formula::class_atom(&lbl("x"), 2, 0, 0);
        assert!(f.check(Shape::new(2, 2, 2)).is_err());
        let f = Formula::class_atom(&lbl("x"), 1, 1, 2);
        assert!(f.check(Shape::new(2, 2, 2)).is_err());
        let f = Formula::eq_atom(&lbl("x"), (0, 0), (0, 5)).unwrap();
        assert!(f.check(Shape::new(2, 2, 2)).is_err());
    }

    #[test]
    fn discrete_semantics() {
        let l = lbl("x");
        let labels = LabelMap::new(1, 2, vec![1, 0]).unwrap();
        let a = Formula::class_atom(&l, 0, 0, 1);
        let b = Formula::class_atom(&l, 0, 1, 1);
        assert!(a.holds(&labels));
        assert!(!b.holds(&labels));
        assert!(!Formula::and(&l, vec![a.clone(), b.clone()]).holds(&labels));
        assert!(Formula::or(&l, vec![a.clone(), b.clone()]).unwrap().holds(&labels));
        assert!(!Formula::implies(&l, a.clone(), b.clone()).holds(&labels));
        assert!(Formula::implies(&l, b.clone(), a.clone()).holds(&labels));
        assert!(Formula::not(&l, b).holds(&labels));
        assert!(Formula::truth(&l).holds(&labels));
        assert!(!Formula::eq_atom(&l, (0, 0), (0, 1)).unwrap().holds(&labels));
    }

    #[test]
    fn conjoin_keeps_child_labels() {
        let a = Formula::class_atom(&lbl("scribbles"), 0, 0, 1);
        let b = Formula::truth(&lbl("bbox"));
        let f = conjoin(vec![a, b]).unwrap();
        let labels: Vec<_> = f.term_labels().iter().map(|l| l.to_string()).collect();
        assert_eq!(labels, ["scribbles", "bbox"]);
    }

    #[test]
    fn json_schema_shape() {
        let l = lbl("fill");
        let f = Formula::implies(
            &l,
            Formula::eq_atom(&l, (0, 0), (1, 1)).unwrap(),
            Formula::not(&l, Formula::class_atom(&l, 0, 1, 2)),
        );
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(
            json,
            r#"{"op":"implies","label":"fill","children":[{"op":"eq_atom","label":"fill","i":0,"j":0,"i2":1,"j2":1},{"op":"not","label":"fill","children":[{"op":"class_atom","label":"fill","i":0,"j":1,"c":2}]}]}"#
        );
        let back: Formula = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn json_rejects_malformed() {
        assert!(serde_json::from_str::<Formula>(r#"{"op":"or","label":"x","children":[]}"#).is_err());
        assert!(serde_json::from_str::<Formula>(r#"{"op":"not","label":"x","children":[]}"#).is_err());
        assert!(serde_json::from_str::<Formula>(r#"{"op":"class_atom","label":"x","i":0}"#).is_err());
        assert!(serde_json::from_str::<Formula>(r#"{"op":"xor","label":"x"}"#).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("nope".parse::<Family>().is_err());
    }
}
