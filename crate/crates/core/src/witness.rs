//! Counterexample files and their validation.
//!
//! A witness is a parenthesized list of `(<var> <value>)` pairs, optionally
//! preceded by the word `sat` as tools write it in their result files:
//!
//! ```text
//! sat
//! ((X_0 0.25)
//!  (X_1 0.5)
//!  (Y_0 1.75))
//! ```

use std::fmt::{self, Write};

use crate::error::{Error, Result};
use crate::netio::NetworkGraph;
use crate::speclang::sexpr::{parse_real, parse_sexprs, SExpr};
use crate::speclang::{AdversarialQuery, VarKind, VariableRef};

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub x: Vec<f64>,
    pub y_claimed: Option<Vec<f64>>,
}

impl Witness {
    pub fn new(x: Vec<f64>) -> Self {
        Witness { x, y_claimed: None }
    }

    pub fn with_outputs(x: Vec<f64>, y: Vec<f64>) -> Self {
        Witness { x, y_claimed: Some(y) }
    }
}

/// Acceptance tolerances: `input` is the absolute per-coordinate slack on
/// the input box, `output` the slack allowed on output constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub input: f64,
    pub output: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            input: 1e-7,
            output: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessVerdict {
    Valid,
    InvalidInput,
    InvalidOutput,
    Malformed,
}

impl WitnessVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            WitnessVerdict::Valid => "valid",
            WitnessVerdict::InvalidInput => "invalid_input",
            WitnessVerdict::InvalidOutput => "invalid_output",
            WitnessVerdict::Malformed => "malformed",
        }
    }
}

impl fmt::Display for WitnessVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of checking one witness. Box violation and slacks refer to the
/// matched disjunct, or to the closest one when nothing matched.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub verdict: WitnessVerdict,
    pub matched_disjunct: Option<usize>,
    pub y_actual: Vec<f64>,
    pub max_box_violation: f64,
    pub constraint_slacks: Vec<f64>,
    pub tolerance: Tolerance,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.verdict == WitnessVerdict::Valid
    }

    fn malformed(msg: String, tolerance: Tolerance) -> Self {
        ValidationReport {
            verdict: WitnessVerdict::Malformed,
            matched_disjunct: None,
            y_actual: Vec::new(),
            max_box_violation: f64::INFINITY,
            constraint_slacks: Vec::new(),
            tolerance,
            warnings: vec![msg],
        }
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "verdict={}", self.verdict);
        let matched = self
            .matched_disjunct
            .map(|d| d.to_string())
            .unwrap_or_else(|| "none".into());
        let _ = writeln!(out, "matched_disjunct={matched}");
        let _ = writeln!(out, "tau_in={:?}", self.tolerance.input);
        let _ = writeln!(out, "tau_out={:?}", self.tolerance.output);
        let _ = writeln!(out, "max_box_violation={:?}", self.max_box_violation);
        let _ = writeln!(out, "y_actual={}", list(&self.y_actual));
        let _ = writeln!(out, "constraint_slacks={}", list(&self.constraint_slacks));
        for w in &self.warnings {
            let _ = writeln!(out, "warning={}", w.replace('\n', " "));
        }
        out
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed(msg.into())
}

fn parse_pair(item: &SExpr) -> Result<(VariableRef, f64)> {
    let pair = item
        .as_list()
        .filter(|l| l.len() == 2)
        .ok_or_else(|| malformed(format!("{}: expected (<var> <value>)", item.pos())))?;
    let name = pair[0]
        .as_atom()
        .ok_or_else(|| malformed(format!("{}: expected a variable name", pair[0].pos())))?;
    let var = VariableRef::from_name(name)
        .ok_or_else(|| malformed(format!("{}: unknown variable '{name}'", pair[0].pos())))?;
    let value = pair[1]
        .as_atom()
        .and_then(parse_real)
        .ok_or_else(|| malformed(format!("{}: '{}' is not a finite number", pair[1].pos(), pair[1])))?;
    Ok((var, value))
}

/// Parses a witness for a network with `d_in` inputs and `d_out` outputs.
/// `y_claimed` is filled only when every output is given.
pub fn parse_witness(text: &str, d_in: usize, d_out: usize) -> Result<Witness> {
    let exprs = parse_sexprs(text).map_err(|e| malformed(e.to_string()))?;
    let mut rest = exprs.as_slice();
    if rest
        .first()
        .and_then(SExpr::as_atom)
        .is_some_and(|a| a.eq_ignore_ascii_case("sat"))
    {
        rest = &rest[1..];
    }
    // Either one wrapping list of pairs or bare pairs at top level.
    let items: &[SExpr] = match rest {
        [single]
            if single
                .as_list()
                .is_some_and(|l| l.iter().all(|i| i.as_list().is_some())) =>
        {
            single.as_list().unwrap_or_default()
        }
        _ => rest,
    };
    if items.is_empty() {
        return Err(malformed("witness contains no assignments"));
    }

    let mut x = vec![None; d_in];
    let mut y = vec![None; d_out];
    for item in items {
        let (var, value) = parse_pair(item)?;
        let slots = match var.kind {
            VarKind::Input => &mut x,
            VarKind::Output => &mut y,
        };
        let slot = slots
            .get_mut(var.index)
            .ok_or_else(|| malformed(format!("{}: {var} is out of range", item.pos())))?;
        if slot.replace(value).is_some() {
            return Err(malformed(format!("{}: {var} assigned twice", item.pos())));
        }
    }
    let x = x
        .iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| malformed(format!("missing value for X_{i}"))))
        .collect::<Result<Vec<_>>>()?;
    let y_claimed = y.iter().copied().collect::<Option<Vec<_>>>().filter(|v| !v.is_empty());
    Ok(Witness { x, y_claimed })
}

/// Writes a witness in the form accepted by [`parse_witness`], without the
/// leading `sat` line.
pub fn print_witness(w: &Witness) -> String {
    let mut pairs: Vec<String> = w.x.iter().enumerate().map(|(i, v)| format!("(X_{i} {v:?})")).collect();
    if let Some(y) = &w.y_claimed {
        pairs.extend(y.iter().enumerate().map(|(j, v)| format!("(Y_{j} {v:?})")));
    }
    format!("({})\n", pairs.join("\n "))
}

/// Checks a witness against a query by re-evaluating the network. Claimed
/// outputs never influence the verdict.
pub fn validate(w: &Witness, query: &AdversarialQuery, net: &NetworkGraph, tol: Tolerance) -> Result<ValidationReport> {
    query.check_dimensions(net.d_in(), net.d_out())?;
    if w.x.len() != net.d_in() {
        return Err(Error::DimensionMismatch(format!(
            "witness has {} inputs, network expects {}",
            w.x.len(),
            net.d_in()
        )));
    }
    if let Some(y) = &w.y_claimed {
        if y.len() != net.d_out() {
            return Err(Error::DimensionMismatch(format!(
                "witness claims {} outputs, network produces {}",
                y.len(),
                net.d_out()
            )));
        }
    }

    // (disjunct, violation, outputs, slacks) of the best candidate so far.
    let mut best: Option<(usize, f64, Vec<f64>, Vec<f64>)> = None;
    let mut cache: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut matched = None;
    for (k, d) in query.disjuncts().iter().enumerate() {
        let violation = d.input_box.violation(&w.x);
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let outside = !(violation <= tol.input);
        if outside {
            let closer = match &best {
                None => true,
                Some((_, v, _, _)) => *v > tol.input && violation < *v,
            };
            if closer {
                best = Some((k, violation, Vec::new(), Vec::new()));
            }
            continue;
        }
        let xc = d.input_box.clamp(&w.x);
        let y = match cache.iter().find(|(x, _)| *x == xc) {
            Some((_, y)) => y.clone(),
            None => {
                let y = net.evaluate(&xc)?;
                cache.push((xc, y.clone()));
                y
            }
        };
        let slacks: Vec<f64> = d.output_constraints.iter().map(|c| c.slack(&y)).collect();
        let worst = slacks.iter().copied().fold(f64::INFINITY, f64::min);
        if worst >= -tol.output {
            matched = Some(k);
            best = Some((k, violation, y, slacks));
            break;
        }
        let closer = match &best {
            None => true,
            Some((_, v, _, s)) => *v > tol.input || s.iter().copied().fold(f64::INFINITY, f64::min) < worst,
        };
        if closer {
            best = Some((k, violation, y, slacks));
        }
    }

    let (_, violation, mut y_actual, slacks) = best.expect("queries have at least one disjunct");
    let verdict = match matched {
        Some(_) => WitnessVerdict::Valid,
        None if violation <= tol.input => WitnessVerdict::InvalidOutput,
        None => WitnessVerdict::InvalidInput,
    };
    if y_actual.is_empty() {
        y_actual = net.evaluate(&w.x)?;
    }

    let mut warnings = Vec::new();
    if let Some(claimed) = &w.y_claimed {
        for (j, (&c, &a)) in claimed.iter().zip(&y_actual).enumerate() {
            if (c - a).abs() > 1e-4 * a.abs().max(c.abs()).max(f64::MIN_POSITIVE) {
                warnings.push(format!("claimed Y_{j}={c:?} but network gives {a:?}"));
            }
        }
    }
    Ok(ValidationReport {
        verdict,
        matched_disjunct: matched,
        y_actual,
        max_box_violation: violation,
        constraint_slacks: slacks,
        tolerance: tol,
        warnings,
    })
}

/// Parses and validates in one step; unparseable text yields a `Malformed`
/// report instead of an error.
pub fn validate_text(
    text: &str,
    query: &AdversarialQuery,
    net: &NetworkGraph,
    tol: Tolerance,
) -> Result<ValidationReport> {
    match parse_witness(text, net.d_in(), net.d_out()) {
        Ok(w) => validate(&w, query, net, tol),
        Err(Error::Malformed(msg)) => Ok(ValidationReport::malformed(msg, tol)),
        Err(e) => Err(e),
    }
}
