//! Loading the hand-computed scoring fixtures and random scoring scenarios.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vnn_arena::runner::{read_store, RunStatus, VerdictRecord};
use vnn_arena::scoring::{
    check_witnesses, parse_truth_file, score_records, InstanceFacts, InstanceKey, RuleSet, ScoreTable, WitnessChecks,
};
use vnn_arena::witness::Tolerance;

use super::fixture;

/// Store records with paths made absolute against the fixture directory.
pub fn fixture_records(year: u32) -> Vec<VerdictRecord> {
    let dir = fixture(&format!("scoring/{year}"));
    let mut records = read_store(dir.join("store.kv")).unwrap();
    for r in &mut records {
        r.network = dir.join(&r.network);
        r.property = dir.join(&r.property);
        r.witness_path = r.witness_path.as_ref().map(|w| dir.join(w));
    }
    records
}

pub fn fixture_facts(year: u32) -> BTreeMap<InstanceKey, InstanceFacts> {
    let path = fixture(&format!("scoring/{year}/truths.csv"));
    match std::fs::read_to_string(path) {
        Ok(text) => parse_truth_file(&text).unwrap(),
        Err(_) => BTreeMap::new(),
    }
}

pub fn expected(year: u32, name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("scoring/{year}/{name}"))).unwrap()
}

/// Scores a fixture campaign; returns the table and the witness checks.
pub fn score_fixture(year: u32) -> (ScoreTable, WitnessChecks) {
    let records = fixture_records(year);
    let rules = RuleSet::for_year(year).unwrap();
    let checks = check_witnesses(&records, Tolerance::default());
    let table = score_records(&records, &rules, &checks, &fixture_facts(year));
    (table, checks)
}

/// A random campaign: 1-5 tools, 1-4 benchmarks, 1-8 instances, random
/// statuses and runtimes, occasionally with a tool missing an instance.
pub fn random_records(rng: &mut ChaCha8Rng) -> Vec<VerdictRecord> {
    let statuses = [
        RunStatus::Sat,
        RunStatus::Unsat,
        RunStatus::Unknown,
        RunStatus::Timeout,
        RunStatus::Error,
    ];
    let tools = rng.gen_range(1..=5);
    let benches = rng.gen_range(1..=4);
    let mut out = Vec::new();
    for b in 0..benches {
        for i in 0..rng.gen_range(1..=8) {
            for t in 0..tools {
                if rng.gen_bool(0.05) {
                    continue;
                }
                let rt = rng.gen_range(0.0..5.0);
                out.push(VerdictRecord {
                    tool: format!("t{t}"),
                    benchmark: format!("b{b}"),
                    index: i,
                    status: statuses[rng.gen_range(0..statuses.len())],
                    raw_runtime: rt,
                    adjusted_runtime: rt,
                    witness_path: None,
                    network: "n".into(),
                    property: "p".into(),
                    start: 0.0,
                    end: rt,
                    diagnostics: String::new(),
                });
            }
        }
    }
    out
}

/// Checks the normalization and ranking invariants of one table; returns a
/// description of the first violation.
pub fn normalization_violation(table: &ScoreTable) -> Option<String> {
    for (bench, &max) in &table.max_points {
        let cells: Vec<_> = table.cells.iter().filter(|c| &c.benchmark == bench).collect();
        let true_max = cells.iter().map(|c| c.points).fold(f64::NEG_INFINITY, f64::max);
        if true_max != max {
            return Some(format!("{bench}: max {max} vs {true_max}"));
        }
        for c in cells {
            let is_argmax = c.points == max;
            let full = c.percent == 100.0;
            if max > 0.0 && is_argmax != full {
                return Some(format!(
                    "{bench}/{}: points {} max {max} percent {}",
                    c.tool, c.points, c.percent
                ));
            }
            if max <= 0.0 && c.percent != 0.0 {
                return Some(format!(
                    "{bench}/{}: non-positive max but percent {}",
                    c.tool, c.percent
                ));
            }
            if max > 0.0 && !is_argmax && (c.percent - 100.0 * c.points / max).abs() > 1e-9 {
                return Some(format!("{bench}/{}: percent {}", c.tool, c.percent));
            }
        }
    }
    for t in &table.totals {
        let sum: f64 = table.cells.iter().filter(|c| c.tool == t.tool).map(|c| c.percent).sum();
        if (sum - t.total).abs() >= 1e-9 {
            return Some(format!("{}: total {} vs sum {sum}", t.tool, t.total));
        }
    }
    for w in table.totals.windows(2) {
        let ordered = w[0].total > w[1].total
            || (w[0].total == w[1].total
                && (w[0].solved > w[1].solved || (w[0].solved == w[1].solved && w[0].tool < w[1].tool)));
        if !ordered {
            return Some(format!("ranking order {} before {}", w[0].tool, w[1].tool));
        }
    }
    None
}
