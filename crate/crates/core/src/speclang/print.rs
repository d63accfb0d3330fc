use std::fmt::Write;

use super::{AdversarialQuery, InputBox, LinearConstraint};

/// Shortest decimal text that parses back to exactly `v`.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

fn constraint_text(c: &LinearConstraint) -> String {
    let term = |coef: f64, var: &super::VariableRef| {
        if coef == 1.0 {
            var.to_string()
        } else {
            format!("(* {} {var})", fmt_real(coef))
        }
    };
    let lhs = if c.terms.len() == 1 {
        term(c.terms[0].0, &c.terms[0].1)
    } else {
        let parts: Vec<String> = c.terms.iter().map(|(k, v)| term(*k, v)).collect();
        format!("(+ {})", parts.join(" "))
    };
    format!("({} {lhs} {})", c.relation.symbol(), fmt_real(c.bound))
}

fn box_atoms(b: &InputBox) -> Vec<String> {
    let mut atoms = Vec::new();
    for (i, (l, u)) in b.lower.iter().zip(&b.upper).enumerate() {
        if l.is_finite() {
            atoms.push(format!("(>= X_{i} {})", fmt_real(*l)));
        }
        if u.is_finite() {
            atoms.push(format!("(<= X_{i} {})", fmt_real(*u)));
        }
    }
    atoms
}

/// Emits VNN-LIB text that [`super::parse_vnnlib`] reads back to an equal query.
///
/// A box shared by all disjuncts is written as top-level bounds; a single
/// disjunct's constraints become top-level assertions; otherwise the
/// disjuncts are written as one `or` of `and` blocks.
pub fn print_vnnlib(query: &AdversarialQuery) -> String {
    let mut out = String::new();
    for i in 0..query.num_inputs() {
        let _ = writeln!(out, "(declare-const X_{i} Real)");
    }
    for j in 0..query.num_outputs() {
        let _ = writeln!(out, "(declare-const Y_{j} Real)");
    }

    let disjuncts = query.disjuncts();
    if let Some(shared) = query.shared_box() {
        for atom in box_atoms(shared) {
            let _ = writeln!(out, "(assert {atom})");
        }
        if disjuncts.len() == 1 {
            for c in &disjuncts[0].output_constraints {
                let _ = writeln!(out, "(assert {})", constraint_text(c));
            }
        } else {
            out.push_str("(assert (or\n");
            for d in disjuncts {
                let parts: Vec<String> = d.output_constraints.iter().map(constraint_text).collect();
                let _ = writeln!(out, "  (and {})", parts.join(" "));
            }
            out.push_str("))\n");
        }
    } else {
        out.push_str("(assert (or\n");
        for d in disjuncts {
            let mut parts = box_atoms(&d.input_box);
            parts.extend(d.output_constraints.iter().map(constraint_text));
            let _ = writeln!(out, "  (and {})", parts.join(" "));
        }
        out.push_str("))\n");
    }
    out
}
