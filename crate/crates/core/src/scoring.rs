//! Points, benchmark scores and rankings under the 2021 and 2022 rules.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::netio::{load_network, NetworkGraph};
use crate::refverify::{pgd_attack, VerifierConfig};
use crate::runner::{InstanceRow, RunStatus, VerdictRecord};
use crate::speclang::{parse_vnnlib, AdversarialQuery};
use crate::witness::{parse_witness, validate, Tolerance, WitnessVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Year {
    R2021,
    R2022,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeBonus {
    pub enabled: bool,
    pub fastest: f64,
    pub second: f64,
    /// Runtimes closer than this many seconds count as equal.
    pub equal_margin: f64,
    /// Runtimes both below this many seconds count as equal.
    pub small_floor: f64,
}

impl Default for TimeBonus {
    fn default() -> Self {
        TimeBonus {
            enabled: true,
            fastest: 2.0,
            second: 1.0,
            equal_margin: 0.2,
            small_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleSet {
    pub year: Year,
    pub correct_points: f64,
    pub penalty_points: f64,
    /// 2021 only.
    pub simple_sat_points: f64,
    pub time_bonus: TimeBonus,
}

impl RuleSet {
    pub fn r2021() -> Self {
        RuleSet {
            year: Year::R2021,
            correct_points: 10.0,
            penalty_points: 100.0,
            simple_sat_points: 1.0,
            time_bonus: TimeBonus::default(),
        }
    }

    pub fn r2022() -> Self {
        RuleSet {
            year: Year::R2022,
            simple_sat_points: 10.0,
            ..Self::r2021()
        }
    }

    pub fn for_year(year: u32) -> Result<Self> {
        match year {
            2021 => Ok(Self::r2021()),
            2022 => Ok(Self::r2022()),
            other => Err(Error::Config(format!("no rule set for {other}; expected 2021 or 2022"))),
        }
    }

    pub fn without_time_bonus(mut self) -> Self {
        self.time_bonus.enabled = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TruthLabel {
    Sat,
    Unsat,
    Undetermined,
}

impl TruthLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthLabel::Sat => "sat",
            TruthLabel::Unsat => "unsat",
            TruthLabel::Undetermined => "undetermined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sat" => Some(TruthLabel::Sat),
            "unsat" => Some(TruthLabel::Unsat),
            "undetermined" | "unknown" => Some(TruthLabel::Undetermined),
            _ => None,
        }
    }
}

impl fmt::Display for TruthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthBasis {
    MajorityVote,
    ValidatedWitness,
    Oracle,
}

impl TruthBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthBasis::MajorityVote => "majority_vote",
            TruthBasis::ValidatedWitness => "validated_witness",
            TruthBasis::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceKey {
    pub benchmark: String,
    pub index: usize,
}

impl InstanceKey {
    pub fn new(benchmark: impl Into<String>, index: usize) -> Self {
        InstanceKey {
            benchmark: benchmark.into(),
            index,
        }
    }

    pub fn of(r: &VerdictRecord) -> Self {
        Self::new(r.benchmark.clone(), r.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub tool: String,
    pub benchmark: String,
    pub index: usize,
}

impl RecordKey {
    pub fn of(r: &VerdictRecord) -> Self {
        RecordKey {
            tool: r.tool.clone(),
            benchmark: r.benchmark.clone(),
            index: r.index,
        }
    }
}

/// Witness check outcome per `sat` record. Records missing from the map
/// count as having no valid witness.
pub type WitnessChecks = BTreeMap<RecordKey, WitnessVerdict>;

fn witness_valid(checks: &WitnessChecks, r: &VerdictRecord) -> bool {
    checks.get(&RecordKey::of(r)) == Some(&WitnessVerdict::Valid)
}

/// Facts about an instance established outside the tools' reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceFacts {
    pub oracle_label: Option<TruthLabel>,
    /// The harness attack found a valid counterexample.
    pub simple_sat: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub instance: InstanceKey,
    pub label: TruthLabel,
    pub basis: TruthBasis,
    pub simple_sat: bool,
}

/// Ground truth for one instance from all tools' records on it.
pub fn derive_ground_truth(
    instance: InstanceKey,
    records: &[&VerdictRecord],
    rules: &RuleSet,
    checks: &WitnessChecks,
    facts: &InstanceFacts,
) -> GroundTruth {
    let truth = |label, basis| GroundTruth {
        instance: instance.clone(),
        label,
        basis,
        simple_sat: facts.simple_sat && label == TruthLabel::Sat,
    };
    if rules.year == Year::R2022
        && records
            .iter()
            .any(|r| r.status == RunStatus::Sat && witness_valid(checks, r))
    {
        return truth(TruthLabel::Sat, TruthBasis::ValidatedWitness);
    }
    if facts.simple_sat {
        return truth(TruthLabel::Sat, TruthBasis::Oracle);
    }
    if let Some(label) = facts.oracle_label {
        return truth(label, TruthBasis::Oracle);
    }
    let count = |s| records.iter().filter(|r| r.status == s).count();
    let (sat, unsat) = (count(RunStatus::Sat), count(RunStatus::Unsat));
    match rules.year {
        // Without a valid witness, 2022 labels rest on the tools' reports.
        Year::R2022 if unsat > 0 => truth(TruthLabel::Unsat, TruthBasis::MajorityVote),
        Year::R2022 => truth(TruthLabel::Undetermined, TruthBasis::MajorityVote),
        Year::R2021 if sat > unsat => truth(TruthLabel::Sat, TruthBasis::MajorityVote),
        Year::R2021 if unsat > sat => truth(TruthLabel::Unsat, TruthBasis::MajorityVote),
        Year::R2021 => truth(TruthLabel::Undetermined, TruthBasis::MajorityVote),
    }
}

/// Base points of one record.
pub fn score_instance(record: &VerdictRecord, truth: &GroundTruth, rules: &RuleSet, witness_valid: bool) -> f64 {
    let (good, bad) = (rules.correct_points, -rules.penalty_points);
    match rules.year {
        Year::R2021 => match (truth.label, record.status) {
            (TruthLabel::Undetermined, _) => 0.0,
            (TruthLabel::Sat, RunStatus::Sat) if truth.simple_sat => rules.simple_sat_points,
            (TruthLabel::Sat, RunStatus::Sat) | (TruthLabel::Unsat, RunStatus::Unsat) => good,
            (TruthLabel::Sat, RunStatus::Unsat) | (TruthLabel::Unsat, RunStatus::Sat) => bad,
            _ => 0.0,
        },
        Year::R2022 => match (record.status, truth.label) {
            (RunStatus::Sat, _) if witness_valid => good,
            (RunStatus::Sat, _) => bad,
            (RunStatus::Unsat, TruthLabel::Sat) => bad,
            (RunStatus::Unsat, TruthLabel::Unsat) => good,
            _ => 0.0,
        },
    }
}

/// Time bonuses among correct results on one instance, given as
/// `(tool, adjusted runtime)`. Equality is the transitive closure of the
/// pairwise rule; the fastest class gets the first bonus, the next class the
/// second.
pub fn time_bonus(correct: &[(String, f64)], rules: &RuleSet) -> BTreeMap<String, f64> {
    let tb = &rules.time_bonus;
    let mut out = BTreeMap::new();
    if !tb.enabled || correct.is_empty() {
        return out;
    }
    let mut sorted: Vec<&(String, f64)> = correct.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let equal = |a: f64, b: f64| (a - b).abs() < tb.equal_margin || (a < tb.small_floor && b < tb.small_floor);
    let mut class = 0;
    for (i, (tool, t)) in sorted.iter().enumerate() {
        if i > 0 && !equal(sorted[i - 1].1, *t) {
            class += 1;
        }
        let bonus = match class {
            0 => tb.fastest,
            1 => tb.second,
            _ => break,
        };
        out.insert(tool.clone(), bonus);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScore {
    pub tool: String,
    pub benchmark: String,
    pub index: usize,
    pub status: RunStatus,
    pub base: f64,
    pub bonus: f64,
    pub runtime: f64,
}

impl InstanceScore {
    pub fn is_correct(&self) -> bool {
        self.base > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkScore {
    pub tool: String,
    pub benchmark: String,
    pub points: f64,
    pub percent: f64,
    pub solved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolTotal {
    pub rank: usize,
    pub tool: String,
    pub total: f64,
    pub solved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub rules: RuleSet,
    /// Sorted by tool, then benchmark.
    pub cells: Vec<BenchmarkScore>,
    pub max_points: BTreeMap<String, f64>,
    /// In rank order.
    pub totals: Vec<ToolTotal>,
    /// Sorted by tool, benchmark, index.
    pub instances: Vec<InstanceScore>,
    pub truths: Vec<GroundTruth>,
}

/// Scores every record. Instances without a truth entry are Undetermined.
pub fn build_score_table(
    records: &[VerdictRecord],
    truths: &[GroundTruth],
    rules: &RuleSet,
    checks: &WitnessChecks,
) -> ScoreTable {
    let truth_of: HashMap<&InstanceKey, &GroundTruth> = truths.iter().map(|t| (&t.instance, t)).collect();
    let mut by_instance: BTreeMap<InstanceKey, Vec<&VerdictRecord>> = BTreeMap::new();
    for r in records {
        by_instance.entry(InstanceKey::of(r)).or_default().push(r);
    }

    let mut instances = Vec::new();
    for (key, recs) in &by_instance {
        let undetermined = GroundTruth {
            instance: key.clone(),
            label: TruthLabel::Undetermined,
            basis: TruthBasis::MajorityVote,
            simple_sat: false,
        };
        let truth = truth_of.get(key).copied().unwrap_or(&undetermined);
        let mut scored: Vec<InstanceScore> = recs
            .iter()
            .map(|r| InstanceScore {
                tool: r.tool.clone(),
                benchmark: r.benchmark.clone(),
                index: r.index,
                status: r.status,
                base: score_instance(r, truth, rules, witness_valid(checks, r)),
                bonus: 0.0,
                runtime: r.adjusted_runtime,
            })
            .collect();
        if scored.len() >= 2 {
            let correct: Vec<(String, f64)> = scored
                .iter()
                .filter(|s| s.is_correct())
                .map(|s| (s.tool.clone(), s.runtime))
                .collect();
            let bonus = time_bonus(&correct, rules);
            for s in &mut scored {
                s.bonus = bonus.get(&s.tool).copied().unwrap_or(0.0);
            }
        }
        instances.extend(scored);
    }
    instances.sort_by(|a, b| (&a.tool, &a.benchmark, a.index).cmp(&(&b.tool, &b.benchmark, b.index)));

    let mut cell_map: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for s in &instances {
        let e = cell_map.entry((s.tool.clone(), s.benchmark.clone())).or_default();
        e.0 += s.base + s.bonus;
        e.1 += usize::from(s.is_correct());
    }
    let mut max_points: BTreeMap<String, f64> = BTreeMap::new();
    for ((_, bench), (points, _)) in &cell_map {
        let m = max_points.entry(bench.clone()).or_insert(f64::NEG_INFINITY);
        *m = m.max(*points);
    }
    let cells: Vec<BenchmarkScore> = cell_map
        .into_iter()
        .map(|((tool, benchmark), (points, solved))| {
            let max = max_points[&benchmark];
            let percent = if max <= 0.0 {
                0.0
            } else if points == max {
                100.0
            } else {
                100.0 * points / max
            };
            BenchmarkScore {
                tool,
                benchmark,
                points,
                percent,
                solved,
            }
        })
        .collect();

    let mut totals: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for c in &cells {
        let e = totals.entry(&c.tool).or_default();
        e.0 += c.percent;
        e.1 += c.solved;
    }
    let mut totals: Vec<ToolTotal> = totals
        .into_iter()
        .map(|(tool, (total, solved))| ToolTotal {
            rank: 0,
            tool: tool.to_string(),
            total,
            solved,
        })
        .collect();
    totals.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then(b.solved.cmp(&a.solved))
            .then_with(|| a.tool.cmp(&b.tool))
    });
    for (i, t) in totals.iter_mut().enumerate() {
        t.rank = i + 1;
    }

    let mut truths: Vec<GroundTruth> = by_instance
        .keys()
        .filter_map(|k| truth_of.get(k).map(|t| (*t).clone()))
        .collect();
    truths.sort_by(|a, b| a.instance.cmp(&b.instance));
    ScoreTable {
        rules: *rules,
        cells,
        max_points,
        totals,
        instances,
        truths,
    }
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_number(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let digits = digits.max(1);
    let exp = format!("{:.*e}", digits - 1, v);
    let (mantissa, e) = exp.split_once('e').expect("exponent present");
    let e: i32 = e.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if e < -4 || e >= digits as i32 {
        format!("{}e{}{:02}", trim(mantissa), if e < 0 { '-' } else { '+' }, e.abs())
    } else {
        let decimals = (digits as i32 - 1 - e).max(0) as usize;
        trim(&format!("{:.*}", decimals, v))
    }
}

fn write_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}

impl ScoreTable {
    /// `tool,benchmark,points,percent`, sorted by tool then benchmark.
    pub fn scores_csv(&self) -> String {
        let rows = self
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.tool.clone(),
                    c.benchmark.clone(),
                    format_number(c.points, 6),
                    format_number(c.percent, 6),
                ]
            })
            .collect();
        write_csv(&["tool", "benchmark", "points", "percent"], rows)
    }

    /// `rank,tool,total,solved` in rank order.
    pub fn totals_csv(&self) -> String {
        let rows = self
            .totals
            .iter()
            .map(|t| {
                vec![
                    t.rank.to_string(),
                    t.tool.clone(),
                    format_number(t.total, 6),
                    t.solved.to_string(),
                ]
            })
            .collect();
        write_csv(&["rank", "tool", "total", "solved"], rows)
    }

    pub fn cell(&self, tool: &str, benchmark: &str) -> Option<&BenchmarkScore> {
        self.cells.iter().find(|c| c.tool == tool && c.benchmark == benchmark)
    }

    pub fn total(&self, tool: &str) -> Option<&ToolTotal> {
        self.totals.iter().find(|t| t.tool == tool)
    }
}

struct InstanceCache {
    loaded: HashMap<(PathBuf, PathBuf), std::result::Result<(NetworkGraph, AdversarialQuery), String>>,
}

impl InstanceCache {
    fn get(&mut self, net: &PathBuf, prop: &PathBuf) -> std::result::Result<&(NetworkGraph, AdversarialQuery), String> {
        self.loaded
            .entry((net.clone(), prop.clone()))
            .or_insert_with(|| {
                let n = load_network(net).map_err(|e| e.to_string())?;
                let text = std::fs::read_to_string(prop).map_err(|e| format!("{}: {e}", prop.display()))?;
                let q = parse_vnnlib(&text).map_err(|e| e.to_string())?;
                Ok((n, q))
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// Validates the witness of every `sat` record against its instance.
/// Unreadable instances or witnesses count as `Malformed`.
pub fn check_witnesses(records: &[VerdictRecord], tol: Tolerance) -> WitnessChecks {
    let mut cache = InstanceCache { loaded: HashMap::new() };
    let mut out = WitnessChecks::new();
    for r in records.iter().filter(|r| r.status == RunStatus::Sat) {
        let verdict = (|| {
            let path = r.witness_path.as_ref()?;
            let text = std::fs::read_to_string(path).ok()?;
            let (net, query) = cache.get(&r.network, &r.property).ok()?;
            let w = parse_witness(&text, net.d_in(), net.d_out()).ok()?;
            validate(&w, query, net, tol).ok().map(|rep| rep.verdict)
        })();
        out.insert(RecordKey::of(r), verdict.unwrap_or(WitnessVerdict::Malformed));
    }
    out
}

/// Runs the harness attack on every instance to flag easy `sat` instances.
pub fn harness_facts(instances: &[(InstanceKey, InstanceRow)], seed: u64) -> BTreeMap<InstanceKey, InstanceFacts> {
    let mut cache = InstanceCache { loaded: HashMap::new() };
    let config = VerifierConfig::with_seed(seed);
    instances
        .iter()
        .map(|(key, row)| {
            let simple_sat = cache
                .get(&row.network_path, &row.spec_path)
                .ok()
                .is_some_and(|(net, q)| pgd_attack(net, q, &config).is_some());
            (
                key.clone(),
                InstanceFacts {
                    oracle_label: None,
                    simple_sat,
                },
            )
        })
        .collect()
}

/// Reads `benchmark,index,label[,simple]` lines (`#` comments allowed),
/// where `label` is sat/unsat/undetermined or `-` and `simple` is 0/1.
pub fn parse_truth_file(text: &str) -> Result<BTreeMap<InstanceKey, InstanceFacts>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Malformed(format!("truth file: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: &str| Error::Malformed(format!("truth file line {line}: {msg}"));
        if rec.len() < 3 || rec.len() > 4 {
            return Err(bad("expected benchmark,index,label[,simple]"));
        }
        let index = rec[1].parse().map_err(|_| bad("index is not an integer"))?;
        let oracle_label = match &rec[2] {
            "-" => None,
            s => Some(TruthLabel::parse(s).ok_or_else(|| bad("unknown label"))?),
        };
        let simple_sat = match rec.get(3) {
            None | Some("0") => false,
            Some("1") => true,
            Some(_) => return Err(bad("simple flag must be 0 or 1")),
        };
        out.insert(
            InstanceKey::new(&rec[0], index),
            InstanceFacts {
                oracle_label,
                simple_sat,
            },
        );
    }
    Ok(out)
}

/// Derives ground truth for every instance in `records` and scores them.
pub fn score_records(
    records: &[VerdictRecord],
    rules: &RuleSet,
    checks: &WitnessChecks,
    facts: &BTreeMap<InstanceKey, InstanceFacts>,
) -> ScoreTable {
    let mut by_instance: BTreeMap<InstanceKey, Vec<&VerdictRecord>> = BTreeMap::new();
    for r in records {
        by_instance.entry(InstanceKey::of(r)).or_default().push(r);
    }
    let none = InstanceFacts::default();
    let truths: Vec<GroundTruth> = by_instance
        .into_iter()
        .map(|(key, recs)| {
            let f = facts.get(&key).unwrap_or(&none);
            derive_ground_truth(key, &recs, rules, checks, f)
        })
        .collect();
    build_score_table(records, &truths, rules, checks)
}
