use std::collections::{BTreeMap, BTreeSet};

use super::sexpr::{parse_real, parse_sexprs, SExpr};
use super::{AdversarialQuery, Disjunct, InputBox, LinearConstraint, Relation, VarKind, VariableRef};
use crate::error::{Error, Pos, Result};

/// Upper limit on the number of disjuncts produced by distributing `or`.
const MAX_DISJUNCTS: usize = 100_000;

/// `Σ coef·var + constant`.
#[derive(Debug, Clone, Default)]
struct LinearExpr {
    coefs: BTreeMap<VariableRef, f64>,
    constant: f64,
}

impl LinearExpr {
    fn constant(v: f64) -> Self {
        LinearExpr {
            coefs: BTreeMap::new(),
            constant: v,
        }
    }

    fn var(v: VariableRef) -> Self {
        LinearExpr {
            coefs: BTreeMap::from([(v, 1.0)]),
            constant: 0.0,
        }
    }

    fn is_constant(&self) -> bool {
        self.coefs.is_empty()
    }

    fn add(mut self, other: LinearExpr) -> Self {
        for (v, c) in other.coefs {
            *self.coefs.entry(v).or_insert(0.0) += c;
        }
        self.constant += other.constant;
        self
    }

    fn scale(mut self, k: f64) -> Self {
        for c in self.coefs.values_mut() {
            *c *= k;
        }
        self.constant *= k;
        self
    }

    fn neg(self) -> Self {
        self.scale(-1.0)
    }

    fn sub(self, other: LinearExpr) -> Self {
        self.add(other.neg())
    }
}

#[derive(Debug, Clone)]
struct Atom {
    expr: LinearExpr,
    relation: Relation,
    pos: Pos,
}

#[derive(Debug, Clone)]
enum Formula {
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Atom(Atom),
}

struct Declarations {
    inputs: BTreeSet<usize>,
    outputs: BTreeSet<usize>,
}

impl Declarations {
    fn contains(&self, v: VariableRef) -> bool {
        match v.kind {
            VarKind::Input => self.inputs.contains(&v.index),
            VarKind::Output => self.outputs.contains(&v.index),
        }
    }
}

/// Parses a VNN-LIB property into a normalized [`AdversarialQuery`].
///
/// All top-level assertions are conjoined, `or` is distributed into
/// disjuncts, single-variable input atoms tighten each disjunct's box and
/// output-only atoms become linear constraints.
pub fn parse_vnnlib(text: &str) -> Result<AdversarialQuery> {
    let exprs = parse_sexprs(text)?;
    let mut decls = Declarations {
        inputs: BTreeSet::new(),
        outputs: BTreeSet::new(),
    };
    let mut asserts = Vec::new();
    let mut first_decl_pos = None;

    for expr in &exprs {
        let pos = expr.pos();
        let Some(items) = expr.as_list() else {
            return Err(Error::syntax(pos, "expected a command in parentheses"));
        };
        match expr.head() {
            Some("declare-const") => {
                first_decl_pos.get_or_insert(pos);
                declare(items, pos, &mut decls)?;
            }
            Some("assert") => {
                if items.len() != 2 {
                    return Err(Error::syntax(pos, "assert takes exactly one formula"));
                }
                asserts.push(formula(&items[1], &decls)?);
            }
            Some(cmd @ ("set-logic" | "check-sat" | "get-model" | "define-fun" | "declare-fun")) => {
                return Err(Error::unsupported(pos, format!("command '{cmd}'")));
            }
            Some(other) => {
                return Err(Error::syntax(pos, format!("unknown command '{other}'")));
            }
            None => return Err(Error::syntax(pos, "expected a command name")),
        }
    }

    let decl_pos = first_decl_pos.unwrap_or(Pos { line: 1, col: 1 });
    let num_inputs = contiguous_count(&decls.inputs, "X", decl_pos)?;
    let num_outputs = contiguous_count(&decls.outputs, "Y", decl_pos)?;

    let conjunction = Formula::And(asserts);
    let dnf = to_dnf(&conjunction)?;
    let mut disjuncts = Vec::with_capacity(dnf.len());
    for atoms in dnf {
        disjuncts.push(build_disjunct(&atoms, num_inputs)?);
    }
    AdversarialQuery::new(num_inputs, num_outputs, disjuncts)
}

fn declare(items: &[SExpr], pos: Pos, decls: &mut Declarations) -> Result<()> {
    if items.len() != 3 {
        return Err(Error::syntax(pos, "declare-const takes a name and a sort"));
    }
    let name = items[1]
        .as_atom()
        .ok_or_else(|| Error::syntax(items[1].pos(), "expected a variable name"))?;
    let var = VariableRef::from_name(name).ok_or_else(|| {
        Error::unsupported(
            items[1].pos(),
            format!("variable '{name}' does not follow the X_<i>/Y_<j> convention"),
        )
    })?;
    match items[2].as_atom() {
        Some("Real") => {}
        _ => {
            return Err(Error::unsupported(
                items[2].pos(),
                format!("sort '{}' (only Real is supported)", items[2]),
            ))
        }
    }
    let fresh = match var.kind {
        VarKind::Input => decls.inputs.insert(var.index),
        VarKind::Output => decls.outputs.insert(var.index),
    };
    if !fresh {
        return Err(Error::syntax(pos, format!("{var} declared twice")));
    }
    Ok(())
}

fn contiguous_count(indices: &BTreeSet<usize>, prefix: &str, pos: Pos) -> Result<usize> {
    for (expected, &idx) in indices.iter().enumerate() {
        if idx != expected {
            return Err(Error::syntax(
                pos,
                format!("{prefix}_{expected} is not declared but {prefix}_{idx} is"),
            ));
        }
    }
    Ok(indices.len())
}

fn formula(expr: &SExpr, decls: &Declarations) -> Result<Formula> {
    let pos = expr.pos();
    let Some(items) = expr.as_list() else {
        return Err(Error::syntax(pos, format!("expected a formula, found '{expr}'")));
    };
    let Some(head) = expr.head() else {
        return Err(Error::syntax(pos, "expected a formula operator"));
    };
    let args = &items[1..];
    match head {
        "and" => Ok(Formula::And(
            args.iter().map(|a| formula(a, decls)).collect::<Result<_>>()?,
        )),
        "or" => Ok(Formula::Or(
            args.iter().map(|a| formula(a, decls)).collect::<Result<_>>()?,
        )),
        "<=" | ">=" => {
            let relation = if head == "<=" {
                Relation::LessEq
            } else {
                Relation::GreaterEq
            };
            if args.len() < 2 {
                return Err(Error::syntax(pos, format!("'{head}' needs two operands")));
            }
            let terms = args.iter().map(|a| term(a, decls)).collect::<Result<Vec<_>>>()?;
            // Chains such as (<= a b c) read as a <= b and b <= c.
            let atoms = terms
                .windows(2)
                .map(|w| {
                    Formula::Atom(Atom {
                        expr: w[0].clone().sub(w[1].clone()),
                        relation,
                        pos,
                    })
                })
                .collect::<Vec<_>>();
            Ok(if atoms.len() == 1 {
                atoms.into_iter().next().unwrap()
            } else {
                Formula::And(atoms)
            })
        }
        "<" | ">" => Err(Error::unsupported(pos, format!("strict inequality '{head}'"))),
        "forall" | "exists" => Err(Error::unsupported(pos, format!("quantifier '{head}'"))),
        other => Err(Error::unsupported(pos, format!("formula operator '{other}'"))),
    }
}

fn term(expr: &SExpr, decls: &Declarations) -> Result<LinearExpr> {
    let pos = expr.pos();
    match expr {
        SExpr::Atom { text, .. } => {
            if let Some(v) = parse_real(text) {
                return Ok(LinearExpr::constant(v));
            }
            if let Some(var) = VariableRef::from_name(text) {
                if !decls.contains(var) {
                    return Err(Error::syntax(pos, format!("{var} used before declaration")));
                }
                return Ok(LinearExpr::var(var));
            }
            Err(Error::syntax(pos, format!("unrecognized term '{text}'")))
        }
        SExpr::List { items, .. } => {
            let Some(head) = expr.head() else {
                return Err(Error::syntax(pos, "expected an arithmetic operator"));
            };
            let args = items[1..].iter().map(|a| term(a, decls)).collect::<Result<Vec<_>>>()?;
            if args.is_empty() {
                return Err(Error::syntax(pos, format!("'{head}' needs operands")));
            }
            match head {
                "+" => Ok(args.into_iter().reduce(LinearExpr::add).expect("non-empty")),
                "-" if args.len() == 1 => Ok(args.into_iter().next().unwrap().neg()),
                "-" => Ok(args.into_iter().reduce(LinearExpr::sub).expect("non-empty")),
                "*" => {
                    let non_constant = args.iter().filter(|a| !a.is_constant()).count();
                    if non_constant > 1 {
                        return Err(Error::unsupported(pos, "non-linear product"));
                    }
                    let mut factor = 1.0;
                    let mut expr = None;
                    for a in args {
                        if a.is_constant() {
                            factor *= a.constant;
                        } else {
                            expr = Some(a);
                        }
                    }
                    Ok(match expr {
                        Some(e) => e.scale(factor),
                        None => LinearExpr::constant(factor),
                    })
                }
                other => Err(Error::unsupported(pos, format!("arithmetic operator '{other}'"))),
            }
        }
    }
}

fn to_dnf(f: &Formula) -> Result<Vec<Vec<Atom>>> {
    match f {
        Formula::Atom(a) => Ok(vec![vec![a.clone()]]),
        Formula::Or(parts) => {
            let mut out = Vec::new();
            for p in parts {
                out.extend(to_dnf(p)?);
                if out.len() > MAX_DISJUNCTS {
                    return Err(Error::unsupported(
                        Pos::default(),
                        format!("disjunctive normal form exceeds {MAX_DISJUNCTS} disjuncts"),
                    ));
                }
            }
            Ok(out)
        }
        Formula::And(parts) => {
            let mut acc: Vec<Vec<Atom>> = vec![Vec::new()];
            for p in parts {
                let rhs = to_dnf(p)?;
                if acc.len().saturating_mul(rhs.len()) > MAX_DISJUNCTS {
                    return Err(Error::unsupported(
                        first_pos(p),
                        format!("disjunctive normal form exceeds {MAX_DISJUNCTS} disjuncts"),
                    ));
                }
                let mut next = Vec::with_capacity(acc.len() * rhs.len());
                for left in &acc {
                    for right in &rhs {
                        let mut conj = left.clone();
                        conj.extend(right.iter().cloned());
                        next.push(conj);
                    }
                }
                acc = next;
            }
            Ok(acc)
        }
    }
}

fn first_pos(f: &Formula) -> Pos {
    match f {
        Formula::Atom(a) => a.pos,
        Formula::And(p) | Formula::Or(p) => p.first().map(first_pos).unwrap_or_default(),
    }
}

fn build_disjunct(atoms: &[Atom], num_inputs: usize) -> Result<Disjunct> {
    let mut input_box = InputBox::unbounded(num_inputs);
    let mut constraints = Vec::new();
    for atom in atoms {
        let has_input = atom.expr.coefs.keys().any(|v| v.kind == VarKind::Input);
        let has_output = atom.expr.coefs.keys().any(|v| v.kind == VarKind::Output);
        let terms: Vec<(f64, VariableRef)> = atom
            .expr
            .coefs
            .iter()
            .filter(|(_, c)| **c != 0.0)
            .map(|(v, c)| (*c, *v))
            .collect();
        if terms.is_empty() {
            return Err(Error::unsupported(atom.pos, "atom without variables"));
        }
        let bound = -atom.expr.constant;
        match (has_input, has_output) {
            (true, true) => return Err(Error::unsupported(atom.pos, "atom mixes input and output variables")),
            (true, false) => {
                if terms.len() != 1 {
                    return Err(Error::unsupported(
                        atom.pos,
                        "input constraint is not a bound on a single variable",
                    ));
                }
                let (coef, var) = terms[0];
                let value = bound / coef;
                let relation = if coef < 0.0 {
                    atom.relation.flipped()
                } else {
                    atom.relation
                };
                let i = var.index;
                match relation {
                    Relation::GreaterEq => input_box.lower[i] = input_box.lower[i].max(value),
                    Relation::LessEq => input_box.upper[i] = input_box.upper[i].min(value),
                }
            }
            (false, _) => {
                constraints.push(
                    LinearConstraint::new(terms, atom.relation, bound)
                        .map_err(|e| Error::unsupported(atom.pos, e.to_string()))?,
                );
            }
        }
    }
    Ok(Disjunct::new(
        InputBox::from_bounds(input_box.lower, input_box.upper),
        constraints,
    ))
}
