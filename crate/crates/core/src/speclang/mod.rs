//! Verification properties in negated ("adversarial") form.
//!
//! A property asks whether some input inside a box drives the network into an
//! unsafe output region. Queries are kept in disjunctive normal form: each
//! [`Disjunct`] pairs an input box with a conjunction of linear output
//! constraints, and the query is satisfiable iff at least one disjunct is.

mod builders;
mod parse;
mod print;
pub mod sexpr;

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

pub use builders::{make_robustness_query, make_unsafe_set_query, RobustnessParams};
pub use parse::parse_vnnlib;
pub use print::print_vnnlib;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    Input,
    Output,
}

/// Reference to `X_<index>` or `Y_<index>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariableRef {
    pub kind: VarKind,
    pub index: usize,
}

impl VariableRef {
    pub fn input(index: usize) -> Self {
        VariableRef {
            kind: VarKind::Input,
            index,
        }
    }

    pub fn output(index: usize) -> Self {
        VariableRef {
            kind: VarKind::Output,
            index,
        }
    }

    /// Parses the `X_<i>` / `Y_<j>` naming convention.
    pub fn from_name(name: &str) -> Option<Self> {
        let (kind, digits) = if let Some(d) = name.strip_prefix("X_") {
            (VarKind::Input, d)
        } else {
            let d = name.strip_prefix("Y_")?;
            (VarKind::Output, d)
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        if digits.len() > 1 && digits.starts_with('0') {
            return None;
        }
        Some(VariableRef {
            kind,
            index: digits.parse().ok()?,
        })
    }
}

impl fmt::Display for VariableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            VarKind::Input => write!(f, "X_{}", self.index),
            VarKind::Output => write!(f, "Y_{}", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    LessEq,
    GreaterEq,
}

impl Relation {
    pub fn flipped(self) -> Self {
        match self {
            Relation::LessEq => Relation::GreaterEq,
            Relation::GreaterEq => Relation::LessEq,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::LessEq => "<=",
            Relation::GreaterEq => ">=",
        }
    }
}

/// Collapses `-0.0` to `0.0` so total ordering agrees with `==`.
pub(crate) fn canon(v: f64) -> f64 {
    v + 0.0
}

/// `Σ coefficient·variable  (<= | >=)  bound`.
///
/// Terms are kept merged (one per variable), free of zero coefficients and
/// sorted by variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(f64, VariableRef)>,
    pub relation: Relation,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn new(terms: impl IntoIterator<Item = (f64, VariableRef)>, relation: Relation, bound: f64) -> Result<Self> {
        let mut merged: Vec<(f64, VariableRef)> = Vec::new();
        let mut sorted: Vec<(f64, VariableRef)> = terms.into_iter().collect();
        sorted.sort_by_key(|a| a.1);
        for (coef, var) in sorted {
            if !coef.is_finite() {
                return Err(Error::InvalidQuery(format!("non-finite coefficient on {var}")));
            }
            match merged.last_mut() {
                Some((c, v)) if *v == var => *c += coef,
                _ => merged.push((coef, var)),
            }
        }
        merged.retain(|(c, _)| *c != 0.0);
        for (c, _) in &mut merged {
            *c = canon(*c);
        }
        if merged.is_empty() {
            return Err(Error::InvalidQuery("linear constraint has no variable terms".into()));
        }
        if !bound.is_finite() {
            return Err(Error::InvalidQuery("non-finite constraint bound".into()));
        }
        Ok(LinearConstraint {
            terms: merged,
            relation,
            bound: canon(bound),
        })
    }

    /// `Y_a - Y_b (<= | >=) 0`.
    pub fn difference(a: usize, b: usize, relation: Relation) -> Result<Self> {
        Self::new(
            [(1.0, VariableRef::output(a)), (-1.0, VariableRef::output(b))],
            relation,
            0.0,
        )
    }

    /// Conjunction stating that output `candidate` is no larger than each of `others`.
    pub fn minimal_among(candidate: usize, others: &[usize]) -> Result<Vec<Self>> {
        others
            .iter()
            .map(|&o| Self::difference(candidate, o, Relation::LessEq))
            .collect()
    }

    /// Conjunction stating that output `candidate` is no smaller than each of `others`.
    pub fn maximal_among(candidate: usize, others: &[usize]) -> Result<Vec<Self>> {
        others
            .iter()
            .map(|&o| Self::difference(candidate, o, Relation::GreaterEq))
            .collect()
    }

    /// Left-hand side evaluated over the output vector, index-ascending.
    /// Input-kind terms contribute nothing; queries never contain them.
    pub fn lhs(&self, outputs: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|(_, v)| v.kind == VarKind::Output)
            .map(|(c, v)| c * outputs[v.index])
            .fold(0.0, |acc, t| acc + t)
    }

    /// Non-negative iff the constraint holds.
    pub fn slack(&self, outputs: &[f64]) -> f64 {
        let lhs = self.lhs(outputs);
        match self.relation {
            Relation::GreaterEq => lhs - self.bound,
            Relation::LessEq => self.bound - lhs,
        }
    }

    pub fn is_satisfied(&self, outputs: &[f64]) -> bool {
        self.slack(outputs) >= 0.0
    }

    /// Output coefficients as a dense vector of length `num_outputs`.
    pub fn output_weights(&self, num_outputs: usize) -> Vec<f64> {
        let mut w = vec![0.0; num_outputs];
        for (c, v) in &self.terms {
            if v.kind == VarKind::Output && v.index < num_outputs {
                w[v.index] += c;
            }
        }
        w
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.terms.iter().zip(&other.terms) {
            let ord = a.1.cmp(&b.1).then(a.0.total_cmp(&b.0));
            if ord != Ordering::Equal {
                return ord;
            }
        }
        self.terms
            .len()
            .cmp(&other.terms.len())
            .then((self.relation as u8).cmp(&(other.relation as u8)))
            .then(self.bound.total_cmp(&other.bound))
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (c, v)) in self.terms.iter().enumerate() {
            if i == 0 {
                write!(f, "{c}·{v}")?;
            } else if *c < 0.0 {
                write!(f, " - {}·{v}", -c)?;
            } else {
                write!(f, " + {c}·{v}")?;
            }
        }
        let rel = match self.relation {
            Relation::LessEq => "≤",
            Relation::GreaterEq => "≥",
        };
        write!(f, " {rel} {}", self.bound)
    }
}

/// Axis-aligned box over the inputs. Bounds may be infinite. A box whose
/// lower bound exceeds its upper bound in some coordinate is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "box lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidQuery(format!("box coordinate {i} has bounds [{l}, {u}]")));
            }
        }
        Ok(Self::from_bounds(lower, upper))
    }

    pub(crate) fn from_bounds(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        InputBox {
            lower: lower.into_iter().map(canon).collect(),
            upper: upper.into_iter().map(canon).collect(),
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        InputBox {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn point(x: &[f64]) -> Self {
        Self::from_bounds(x.to_vec(), x.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(&self.upper).any(|(l, u)| l > u)
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Largest per-coordinate distance from `x` to the box; infinite for an
    /// empty box.
    pub fn violation(&self, x: &[f64]) -> f64 {
        if self.is_empty() {
            return f64::INFINITY;
        }
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.max(*l).min(*u))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => l + 0.5 * (u - l),
                (true, false) => *l,
                (false, true) => *u,
                (false, false) => 0.0,
            })
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        let key = |b: &InputBox| -> Vec<f64> { b.lower.iter().chain(&b.upper).copied().collect::<Vec<_>>() };
        let (a, b) = (key(self), key(other));
        a.iter()
            .zip(&b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(a.len().cmp(&b.len()))
    }
}

/// One branch of the negated property.
#[derive(Debug, Clone, PartialEq)]
pub struct Disjunct {
    pub input_box: InputBox,
    pub output_constraints: Vec<LinearConstraint>,
}

impl Disjunct {
    pub fn new(input_box: InputBox, output_constraints: Vec<LinearConstraint>) -> Self {
        Disjunct {
            input_box,
            output_constraints,
        }
    }

    /// An empty box makes the disjunct unsatisfiable outright.
    pub fn is_vacuous(&self) -> bool {
        self.input_box.is_empty()
    }

    pub fn outputs_satisfied(&self, outputs: &[f64]) -> bool {
        self.output_constraints.iter().all(|c| c.is_satisfied(outputs))
    }

    fn normalize(&mut self) {
        self.output_constraints.sort_by(|a, b| a.canonical_cmp(b));
        self.output_constraints.dedup();
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.input_box.canonical_cmp(&other.input_box).then_with(|| {
            for (a, b) in self.output_constraints.iter().zip(&other.output_constraints) {
                let o = a.canonical_cmp(b);
                if o != Ordering::Equal {
                    return o;
                }
            }
            self.output_constraints.len().cmp(&other.output_constraints.len())
        })
    }
}

/// Satisfiable iff some input in a disjunct's box maps to outputs meeting all
/// of that disjunct's constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialQuery {
    num_inputs: usize,
    num_outputs: usize,
    disjuncts: Vec<Disjunct>,
}

impl AdversarialQuery {
    /// Validates dimensions and brings the disjuncts into canonical order:
    /// constraints sorted and deduplicated within each disjunct, then
    /// disjuncts sorted and deduplicated.
    pub fn new(num_inputs: usize, num_outputs: usize, mut disjuncts: Vec<Disjunct>) -> Result<Self> {
        if num_inputs == 0 || num_outputs == 0 {
            return Err(Error::InvalidQuery(format!(
                "query needs at least one input and one output (got {num_inputs}, {num_outputs})"
            )));
        }
        if disjuncts.is_empty() {
            return Err(Error::InvalidQuery("query has no disjuncts".into()));
        }
        for (k, d) in disjuncts.iter().enumerate() {
            if d.input_box.dim() != num_inputs {
                return Err(Error::DimensionMismatch(format!(
                    "disjunct {k} box has dimension {}, expected {num_inputs}",
                    d.input_box.dim()
                )));
            }
            for c in &d.output_constraints {
                for (_, v) in &c.terms {
                    if v.kind != VarKind::Output {
                        return Err(Error::InvalidQuery(format!(
                            "disjunct {k} output constraint references input {v}"
                        )));
                    }
                    if v.index >= num_outputs {
                        return Err(Error::DimensionMismatch(format!(
                            "disjunct {k} references {v} but there are {num_outputs} outputs"
                        )));
                    }
                }
            }
        }
        for d in &mut disjuncts {
            d.normalize();
        }
        disjuncts.sort_by(|a, b| a.canonical_cmp(b));
        disjuncts.dedup();
        Ok(AdversarialQuery {
            num_inputs,
            num_outputs,
            disjuncts,
        })
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_outputs(&self) -> usize {
        self.num_outputs
    }

    pub fn disjuncts(&self) -> &[Disjunct] {
        &self.disjuncts
    }

    /// Binds the query to a network signature.
    pub fn check_dimensions(&self, d_in: usize, d_out: usize) -> Result<()> {
        if self.num_inputs != d_in || self.num_outputs != d_out {
            return Err(Error::DimensionMismatch(format!(
                "query is {}→{}, network is {d_in}→{d_out}",
                self.num_inputs, self.num_outputs
            )));
        }
        Ok(())
    }

    /// Index of the first disjunct satisfied exactly by `(x, y)`.
    pub fn satisfied_disjunct(&self, x: &[f64], y: &[f64]) -> Option<usize> {
        self.disjuncts
            .iter()
            .position(|d| d.input_box.contains(x) && d.outputs_satisfied(y))
    }

    /// True when every disjunct shares one box.
    pub fn shared_box(&self) -> Option<&InputBox> {
        let first = &self.disjuncts[0].input_box;
        self.disjuncts[1..]
            .iter()
            .all(|d| &d.input_box == first)
            .then_some(first)
    }
}
