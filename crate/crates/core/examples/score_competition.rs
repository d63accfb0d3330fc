//! Scores a small three-tool campaign under both rule sets and prints the
//! per-benchmark table and the ranking.

use std::collections::BTreeMap;

use vnn_arena::runner::{RunStatus, VerdictRecord};
use vnn_arena::scoring::{score_records, RuleSet, WitnessChecks};

fn record(tool: &str, index: usize, status: RunStatus, runtime: f64) -> VerdictRecord {
    VerdictRecord {
        tool: tool.into(),
        benchmark: "acas".into(),
        index,
        status,
        raw_runtime: runtime + 0.5,
        adjusted_runtime: runtime,
        witness_path: None,
        network: "net.onnx".into(),
        property: "prop.vnnlib".into(),
        start: 0.0,
        end: runtime + 0.5,
        diagnostics: String::new(),
    }
}

fn main() {
    use RunStatus::*;
    let records = vec![
        record("alpha", 0, Unsat, 1.2),
        record("beta", 0, Unsat, 4.0),
        record("gamma", 0, Timeout, 60.0),
        record("alpha", 1, Unsat, 2.0),
        record("beta", 1, Unsat, 2.1),
        record("gamma", 1, Sat, 0.4),
        record("alpha", 2, Unknown, 3.0),
        record("beta", 2, Unsat, 9.0),
        record("gamma", 2, Unsat, 5.0),
    ];
    // No witness files here, so the 2022 rules treat every sat answer as
    // unsupported.
    let checks = WitnessChecks::new();
    for (name, rules) in [("2021", RuleSet::r2021()), ("2022", RuleSet::r2022())] {
        let table = score_records(&records, &rules, &checks, &BTreeMap::new());
        println!("== {name} rules ==");
        print!("{}", table.scores_csv());
        print!("{}", table.totals_csv());
        println!();
    }
}
