//! VNN-LIB fixtures with hand-derived expected structures, an independent
//! formula evaluator and random query strategies.

use std::collections::HashMap;

use super::fixture;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnn_arena::speclang::{
    parse_vnnlib, AdversarialQuery, Disjunct, InputBox, LinearConstraint, Relation, VariableRef,
};

const GE: Relation = Relation::GreaterEq;
const LE: Relation = Relation::LessEq;

/// Hand-written description of a disjunct: box bounds and output
/// constraints as `(terms as (coef, output index), relation, bound)`.
type Constraint = (Vec<(f64, usize)>, Relation, f64);

struct Expect {
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<Constraint>,
}

fn ex(lower: &[f64], upper: &[f64], constraints: Vec<Constraint>) -> Expect {
    Expect {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        constraints,
    }
}

fn to_disjunct(e: &Expect) -> Disjunct {
    let cs = e
        .constraints
        .iter()
        .map(|(terms, rel, b)| {
            LinearConstraint::new(terms.iter().map(|&(c, j)| (c, VariableRef::output(j))), *rel, *b).unwrap()
        })
        .collect();
    Disjunct::new(
        InputBox {
            lower: e.lower.clone(),
            upper: e.upper.clone(),
        },
        cs,
    )
}

fn expected_fixtures() -> Vec<(&'static str, usize, usize, Vec<Expect>)> {
    vec![
        (
            "01_single_box",
            5,
            3,
            vec![ex(
                &[-0.5, -0.25, 0.0, -0.125, 1.5],
                &[0.5, 0.25, 1.0, 0.125, 2.0],
                vec![(vec![(1.0, 0), (-1.0, 1)], LE, 0.0)],
            )],
        ),
        (
            "02_robustness_or",
            2,
            3,
            vec![
                ex(&[0.25, -1.0], &[0.75, -0.5], vec![(vec![(-1.0, 0), (1.0, 1)], GE, 0.0)]),
                ex(&[0.25, -1.0], &[0.75, -0.5], vec![(vec![(-1.0, 0), (1.0, 2)], GE, 0.0)]),
            ],
        ),
        (
            "03_multi_box",
            2,
            2,
            vec![
                ex(&[-1.0, -1.0], &[0.0, 0.0], vec![(vec![(1.0, 0)], GE, 0.5)]),
                ex(
                    &[0.0, 0.0],
                    &[1.0, 1.0],
                    vec![(vec![(1.0, 1)], LE, -0.5), (vec![(1.0, 0), (-1.0, 1)], GE, 0.0)],
                ),
            ],
        ),
        (
            "04_scaled_bounds",
            2,
            1,
            vec![ex(&[-0.5, -0.5], &[0.5, 0.5], vec![(vec![(1.0, 0)], GE, 0.0)])],
        ),
        (
            "05_linear_outputs",
            1,
            3,
            vec![ex(
                &[-2.0],
                &[2.0],
                vec![
                    (vec![(1.0, 0)], GE, 0.5),
                    (vec![(1.0, 0), (1.0, 1)], LE, 1.0),
                    (vec![(-1.0, 0), (-0.5, 1), (2.0, 2)], GE, 0.25),
                ],
            )],
        ),
        (
            "06_nested_or",
            1,
            2,
            [(GE, 1.0), (LE, -1.0)]
                .iter()
                .flat_map(|&(r0, b0)| {
                    [(GE, 1.0), (LE, -1.0)].map(move |(r1, b1)| {
                        ex(&[0.0], &[1.0], vec![(vec![(1.0, 0)], r0, b0), (vec![(1.0, 1)], r1, b1)])
                    })
                })
                .collect(),
        ),
        (
            "07_chained",
            2,
            3,
            vec![ex(
                &[-1.0, 0.0],
                &[1.0, 0.5],
                vec![
                    (vec![(1.0, 0), (-1.0, 1)], GE, 0.0),
                    (vec![(1.0, 1), (-1.0, 2)], GE, 0.0),
                ],
            )],
        ),
        (
            "08_numbers",
            1,
            2,
            vec![ex(
                &[-1.25],
                &[0.5],
                vec![(vec![(1.0, 0)], GE, 1.5e-3), (vec![(1.0, 1)], LE, -0.75)],
            )],
        ),
        (
            "09_duplicates",
            1,
            2,
            vec![
                ex(&[0.0], &[1.0], vec![(vec![(1.0, 0), (-1.0, 1)], GE, 0.0)]),
                ex(&[0.0], &[1.0], vec![(vec![(1.0, 0)], LE, -2.0)]),
            ],
        ),
        (
            "10_empty_box",
            1,
            1,
            vec![
                ex(&[0.0], &[1.0], vec![(vec![(1.0, 0)], GE, 0.5)]),
                ex(&[1.0], &[0.0], vec![(vec![(1.0, 0)], GE, -0.5)]),
            ],
        ),
    ]
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("vnnlib/{name}.vnnlib"))).unwrap()
}

pub fn check_fixture_structures() -> usize {
    let mut checked = 0;
    for (name, d_in, d_out, expect) in expected_fixtures() {
        let q = parse_vnnlib(&read(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!((q.num_inputs(), q.num_outputs()), (d_in, d_out), "{name}");
        let want = AdversarialQuery::new(d_in, d_out, expect.iter().map(to_disjunct).collect()).unwrap();
        assert_eq!(q, want, "{name}");
        checked += 1;
    }
    checked
}

/// Minimal, independent reading of the raw formula for the brute-force
/// semantic check.
#[derive(Debug)]
enum Node {
    Atom(String),
    List(Vec<Node>),
}

fn read_nodes(text: &str) -> Vec<Node> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let line = line.split(';').next().unwrap();
        let spaced = line.replace('(', " ( ").replace(')', " ) ");
        tokens.extend(spaced.split_whitespace().map(str::to_string));
    }
    let mut stack: Vec<Vec<Node>> = vec![Vec::new()];
    for t in tokens {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().unwrap();
                stack.last_mut().unwrap().push(Node::List(done));
            }
            _ => stack.last_mut().unwrap().push(Node::Atom(t)),
        }
    }
    stack.pop().unwrap()
}

fn value(n: &Node, env: &HashMap<String, f64>) -> f64 {
    match n {
        Node::Atom(a) => env.get(a).copied().unwrap_or_else(|| a.parse().unwrap()),
        Node::List(items) => {
            let Node::Atom(op) = &items[0] else { panic!() };
            let args: Vec<f64> = items[1..].iter().map(|a| value(a, env)).collect();
            match op.as_str() {
                "+" => args.iter().sum(),
                "-" if args.len() == 1 => -args[0],
                "-" => args[0] - args[1..].iter().sum::<f64>(),
                "*" => args.iter().product(),
                _ => panic!("{op}"),
            }
        }
    }
}

fn truth(n: &Node, env: &HashMap<String, f64>) -> bool {
    let Node::List(items) = n else { panic!() };
    let Node::Atom(op) = &items[0] else { panic!() };
    let args = &items[1..];
    match op.as_str() {
        "and" => args.iter().all(|a| truth(a, env)),
        "or" => args.iter().any(|a| truth(a, env)),
        "<=" | ">=" => {
            let vs: Vec<f64> = args.iter().map(|a| value(a, env)).collect();
            vs.windows(2)
                .all(|w| if op == "<=" { w[0] <= w[1] } else { w[0] >= w[1] })
        }
        _ => panic!("{op}"),
    }
}

/// Fraction of random assignments on which the parsed query and a direct
/// evaluation of the assertions agree, and how many satisfied the formula.
pub fn brute_force_dnf(name: &str, samples: usize, seed: u64) -> (usize, usize) {
    let text = read(name);
    let q = parse_vnnlib(&text).unwrap();
    let asserts: Vec<Node> = read_nodes(&text)
        .into_iter()
        .filter_map(|n| match n {
            Node::List(mut items) if matches!(&items[0], Node::Atom(a) if a == "assert") => Some(items.remove(1)),
            _ => None,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut agree, mut sat) = (0, 0);
    for _ in 0..samples {
        // Eighths in [-2.5, 2.5] hit box faces and constraint boundaries exactly.
        let mut draw = || rng.gen_range(-20i32..=20) as f64 / 8.0;
        let x: Vec<f64> = (0..q.num_inputs()).map(|_| draw()).collect();
        let y: Vec<f64> = (0..q.num_outputs()).map(|_| draw()).collect();
        let mut env = HashMap::new();
        for (i, v) in x.iter().enumerate() {
            env.insert(format!("X_{i}"), *v);
        }
        for (j, v) in y.iter().enumerate() {
            env.insert(format!("Y_{j}"), *v);
        }
        let direct = asserts.iter().all(|a| truth(a, &env));
        let parsed = q.satisfied_disjunct(&x, &y).is_some();
        sat += usize::from(direct);
        agree += usize::from(direct == parsed);
    }
    (agree, sat)
}

pub const FIXTURE_NAMES: [&str; 10] = [
    "01_single_box",
    "02_robustness_or",
    "03_multi_box",
    "04_scaled_bounds",
    "05_linear_outputs",
    "06_nested_or",
    "07_chained",
    "08_numbers",
    "09_duplicates",
    "10_empty_box",
];

fn bound_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -1e3f64..1e3,
        1 => (-40i32..40).prop_map(|k| k as f64 / 8.0),
        1 => Just(0.0),
    ]
}

prop_compose! {
    fn arb_box(d: usize)(pairs in prop::collection::vec((bound_value(), bound_value(), 0u8..10, 0u8..10), d)) -> InputBox {
        let (lower, upper) = pairs
            .into_iter()
            .map(|(a, b, ml, mu)| {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                (if ml == 0 { f64::NEG_INFINITY } else { lo }, if mu == 0 { f64::INFINITY } else { hi })
            })
            .unzip();
        InputBox::new(lower, upper).unwrap()
    }
}

fn arb_constraint(d_out: usize) -> impl Strategy<Value = LinearConstraint> {
    (
        prop::collection::vec((bound_value().prop_filter("nonzero", |c| *c != 0.0), 0..d_out), 1..=3),
        any::<bool>(),
        bound_value(),
    )
        .prop_map(|(terms, ge, b)| {
            let rel = if ge { GE } else { LE };
            LinearConstraint::new(terms.into_iter().map(|(c, j)| (c, VariableRef::output(j))), rel, b)
        })
        .prop_filter_map("cancelled terms", |c| c.ok())
}

pub fn arb_query() -> impl Strategy<Value = AdversarialQuery> {
    (1usize..5, 1usize..5, any::<bool>()).prop_flat_map(|(d_in, d_out, shared)| {
        let disjunct = (arb_box(d_in), prop::collection::vec(arb_constraint(d_out), 0..4));
        (arb_box(d_in), prop::collection::vec(disjunct, 1..5)).prop_map(move |(common_box, ds)| {
            let ds = ds
                .into_iter()
                .map(|(b, cs)| Disjunct::new(if shared { common_box.clone() } else { b }, cs))
                .collect();
            AdversarialQuery::new(d_in, d_out, ds).unwrap()
        })
    })
}
