//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on domain errors, 2 on usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::netio::load_network;
use crate::refverify::{pgd_attack, verify, VerifierConfig, VerifyStatus};
use crate::report::{cactus_data, emit_reports, ReportFormat};
use crate::runner::{
    load_instances_file, measure_overhead, preflight, read_store, run_campaign, write_trivial_instance, InstanceRow,
    RunOptions, ToolAdapter, VerdictRecord, VerdictStore,
};
use crate::scoring::{
    check_witnesses, harness_facts, parse_truth_file, score_records, InstanceFacts, InstanceKey, RuleSet, ScoreTable,
    WitnessChecks,
};
use crate::speclang::{parse_vnnlib, print_vnnlib, AdversarialQuery};
use crate::witness::{print_witness, validate_text, Tolerance};

#[derive(Debug, Parser)]
#[command(
    name = "vnn-arena",
    version,
    about = "Neural network verification competition harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize a network (.onnx or text) or a property (.vnnlib).
    Inspect {
        file: PathBuf,
        /// Print the property in canonical form.
        #[arg(long)]
        canonical: bool,
    },
    /// Decide a property with the reference verifier (tool adapter contract).
    Verify {
        network: PathBuf,
        property: PathBuf,
        /// Seconds.
        timeout: f64,
        result_file: PathBuf,
        #[command(flatten)]
        verifier: VerifierArgs,
    },
    /// Search for a counterexample with the PGD attack only.
    Falsify {
        network: PathBuf,
        property: PathBuf,
        /// Write the witness here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a counterexample by re-evaluating the network.
    ValidateWitness {
        network: PathBuf,
        property: PathBuf,
        witness: PathBuf,
        #[arg(long, default_value_t = 1e-7)]
        tau_in: f64,
        #[arg(long, default_value_t = 0.0)]
        tau_out: f64,
    },
    /// Measure a tool's startup overhead on a trivial instance.
    MeasureOverhead {
        /// Tool executable following the adapter contract.
        command: PathBuf,
        /// Extra arguments placed before the standard four.
        #[arg(long = "arg", allow_hyphen_values = true)]
        args: Vec<String>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Scratch directory (defaults to $VNN_ARENA_WORKDIR or a temp dir).
        #[arg(long)]
        workdir: Option<PathBuf>,
    },
    /// Run a campaign described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a verdict store.
    Score {
        #[command(flatten)]
        scoring: ScoringArgs,
        /// Directory for scores.csv and totals.csv; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a verdict store and write all reports.
    Report {
        #[command(flatten)]
        scoring: ScoringArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Run a quick end-to-end sanity check of the built-in components.
    Selfcheck,
}

#[derive(Debug, Args)]
struct VerifierArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    max_subproblems: Option<u64>,
    /// Skip the PGD attack.
    #[arg(long)]
    no_attack: bool,
}

#[derive(Debug, Args)]
struct ScoringArgs {
    #[arg(long, value_parser = ["2021", "2022"])]
    rules: String,
    #[arg(long)]
    store: PathBuf,
    /// CSV of `benchmark,index,label[,simple]` oracle facts.
    #[arg(long)]
    truths: Option<PathBuf>,
    /// Flag easy SAT instances by running the harness attack.
    #[arg(long)]
    harness_attack: bool,
    #[arg(long)]
    no_time_bonus: bool,
    #[arg(long, default_value_t = 1e-7)]
    tau_in: f64,
    #[arg(long, default_value_t = 0.0)]
    tau_out: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Text,
}

/// Campaign configuration file (TOML). Relative paths resolve against the
/// file's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub workdir: PathBuf,
    pub store: Option<PathBuf>,
    pub overhead_repeats: Option<usize>,
    pub grace_seconds: Option<f64>,
    #[serde(default, rename = "tool")]
    pub tools: Vec<ToolConfig>,
    #[serde(default, rename = "benchmark")]
    pub benchmarks: Vec<BenchmarkConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    pub name: String,
    pub command: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    pub prepare: Option<PathBuf>,
    /// Known overhead in seconds; measured when absent.
    pub overhead: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub instances: PathBuf,
    /// Defaults to the instance file's directory name.
    pub name: Option<String>,
}

impl HarnessConfig {
    /// Parses and checks a configuration; paths become absolute.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut c: HarnessConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        c.workdir = abs(&c.workdir);
        c.store = Some(
            c.store
                .as_deref()
                .map(abs)
                .unwrap_or_else(|| c.workdir.join("store.kv")),
        );
        for t in &mut c.tools {
            if t.command.components().count() > 1 {
                t.command = abs(&t.command);
                if !t.command.is_file() {
                    return Err(Error::MissingFile(t.command.clone()));
                }
            }
            if let Some(p) = &t.prepare {
                let p = abs(p);
                if !p.is_file() {
                    return Err(Error::MissingFile(p));
                }
                t.prepare = Some(p);
            }
        }
        for b in &mut c.benchmarks {
            b.instances = abs(&b.instances);
            if !b.instances.is_file() {
                return Err(Error::MissingFile(b.instances.clone()));
            }
        }
        let mut names: Vec<&str> = c.tools.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("tool names must be unique".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
        Self::from_toml(&text, &base)
    }

    pub fn instances(&self) -> Result<Vec<InstanceRow>> {
        let mut rows = Vec::new();
        for b in &self.benchmarks {
            let mut r = load_instances_file(&b.instances)?;
            if let Some(name) = &b.name {
                r.iter_mut().for_each(|row| row.benchmark = name.clone());
            }
            rows.extend(r);
        }
        Ok(rows)
    }

    pub fn run_options(&self) -> RunOptions {
        let mut opts = RunOptions::new(&self.workdir);
        if let Some(g) = self.grace_seconds {
            opts.grace = Duration::from_secs_f64(g.max(0.0));
        }
        opts
    }

    pub fn adapters(&self) -> Vec<ToolAdapter> {
        self.tools
            .iter()
            .map(|t| ToolAdapter {
                name: t.name.clone(),
                prepare_command: t.prepare.clone(),
                run_command: t.command.clone(),
                args: t.args.clone(),
                overhead: t.overhead,
            })
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_query(path: &Path) -> Result<AdversarialQuery> {
    parse_vnnlib(&read_text(path)?)
}

fn describe_query(q: &AdversarialQuery) -> String {
    let constraints: usize = q.disjuncts().iter().map(|d| d.output_constraints.len()).sum();
    format!(
        "property: {} inputs, {} outputs, {} disjunct(s), {} output constraint(s), shared box: {}",
        q.num_inputs(),
        q.num_outputs(),
        q.disjuncts().len(),
        constraints,
        if q.shared_box().is_some() { "yes" } else { "no" }
    )
}

fn cmd_inspect(file: &Path, canonical: bool) -> Result<()> {
    let is_property = file.extension().is_some_and(|e| e.eq_ignore_ascii_case("vnnlib"));
    if is_property {
        let q = load_query(file)?;
        println!("{}", describe_query(&q));
        if canonical {
            print!("{}", print_vnnlib(&q));
        }
    } else {
        let net = load_network(file)?;
        println!("network: {}", net.summary());
    }
    Ok(())
}

fn verifier_config(a: &VerifierArgs, timeout: f64) -> VerifierConfig {
    let mut c = VerifierConfig::with_seed(a.seed);
    // Leave headroom so the result file is written before the harness limit.
    c.time_budget = Duration::from_secs_f64((0.9 * timeout).max(0.01));
    c.attack.enabled = !a.no_attack;
    if let Some(d) = a.max_depth {
        c.bab.max_depth = d;
    }
    if let Some(s) = a.max_subproblems {
        c.bab.max_subproblems = s;
    }
    c
}

fn cmd_verify(network: &Path, property: &Path, timeout: f64, result: &Path, a: &VerifierArgs) -> Result<()> {
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(Error::Config(format!("timeout must be positive, got {timeout}")));
    }
    let outcome = (|| -> Result<_> {
        let net = load_network(network)?;
        let query = load_query(property)?;
        query.check_dimensions(net.d_in(), net.d_out())?;
        Ok(verify(&net, &query, &verifier_config(a, timeout)))
    })();
    match outcome {
        Ok(out) => {
            let mut text = format!("{}\n", out.status);
            if let (VerifyStatus::Sat, Some(w)) = (out.status, &out.witness) {
                text.push_str(&print_witness(w));
            }
            write_text(result, &text)?;
            println!("{}", out.status);
            eprintln!(
                "subproblems={} attack_iterations={} elapsed={:.3}s{}",
                out.stats.subproblems,
                out.stats.attack_iterations,
                out.stats.elapsed.as_secs_f64(),
                out.reason.map(|r| format!(" reason={r}")).unwrap_or_default()
            );
            Ok(())
        }
        Err(e) => {
            write_text(result, "error\n")?;
            Err(e)
        }
    }
}

fn cmd_falsify(network: &Path, property: &Path, out: Option<&Path>, seed: u64) -> Result<()> {
    let net = load_network(network)?;
    let query = load_query(property)?;
    query.check_dimensions(net.d_in(), net.d_out())?;
    match pgd_attack(&net, &query, &VerifierConfig::with_seed(seed)) {
        Some(w) => {
            println!("sat");
            match out {
                Some(path) => write_text(path, &print_witness(&w))?,
                None => print!("{}", print_witness(&w)),
            }
        }
        None => println!("unknown"),
    }
    Ok(())
}

fn cmd_validate(network: &Path, property: &Path, witness: &Path, tol: Tolerance) -> Result<()> {
    let net = load_network(network)?;
    let query = load_query(property)?;
    let report = validate_text(&read_text(witness)?, &query, &net, tol)?;
    print!("{}", report.to_kv());
    Ok(())
}

fn scratch_root(workdir: Option<PathBuf>) -> Result<(PathBuf, Option<tempfile::TempDir>)> {
    if let Some(w) = workdir.or_else(|| std::env::var_os(crate::runner::WORKDIR_ENV).map(PathBuf::from)) {
        return Ok((w, None));
    }
    let t = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    Ok((t.path().to_path_buf(), Some(t)))
}

fn cmd_measure(command: PathBuf, args: Vec<String>, repeats: usize, workdir: Option<PathBuf>) -> Result<()> {
    let (root, _guard) = scratch_root(workdir)?;
    let trivial = write_trivial_instance(&root.join("trivial"))?;
    let mut tool = ToolAdapter::new("probe", command);
    tool.args = args;
    let overhead = measure_overhead(&mut tool, &trivial, repeats, &RunOptions::new(&root))?;
    println!("{overhead:.6}");
    Ok(())
}

fn cmd_run(config: &Path) -> Result<()> {
    let cfg = HarnessConfig::load(config)?;
    let instances = cfg.instances()?;
    preflight(&instances)?;
    let opts = cfg.run_options();
    let trivial = write_trivial_instance(&cfg.workdir.join("trivial"))?;
    let mut tools = cfg.adapters();
    for tool in &mut tools {
        if tool.overhead.is_none() {
            let o = measure_overhead(tool, &trivial, cfg.overhead_repeats.unwrap_or(3), &opts)?;
            eprintln!("{}: overhead {o:.3} s", tool.name);
        }
    }
    let store_path = cfg.store.clone().expect("set at load");
    if let Some(dir) = store_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut store = VerdictStore::open(&store_path)?;
    let added = run_campaign(&tools, &instances, &mut store, &opts)?;
    println!(
        "{added} new record(s), {} total in {}",
        store.records().len(),
        store_path.display()
    );
    Ok(())
}

fn instance_rows(records: &[VerdictRecord]) -> Vec<(InstanceKey, InstanceRow)> {
    let mut seen: BTreeMap<InstanceKey, InstanceRow> = BTreeMap::new();
    for r in records {
        seen.entry(InstanceKey::of(r)).or_insert_with(|| InstanceRow {
            benchmark: r.benchmark.clone(),
            network_path: r.network.clone(),
            spec_path: r.property.clone(),
            timeout: 1.0,
        });
    }
    seen.into_iter().collect()
}

fn compute_scores(a: &ScoringArgs) -> Result<(ScoreTable, WitnessChecks)> {
    let year: u32 = a
        .rules
        .parse()
        .map_err(|_| Error::Config(format!("bad rule year '{}'", a.rules)))?;
    let mut rules = RuleSet::for_year(year)?;
    if a.no_time_bonus {
        rules = rules.without_time_bonus();
    }
    let records = read_store(&a.store)?;
    let checks = check_witnesses(
        &records,
        Tolerance {
            input: a.tau_in,
            output: a.tau_out,
        },
    );
    let mut facts: BTreeMap<InstanceKey, InstanceFacts> = if a.harness_attack {
        harness_facts(&instance_rows(&records), a.seed)
    } else {
        BTreeMap::new()
    };
    if let Some(path) = &a.truths {
        for (k, f) in parse_truth_file(&read_text(path)?)? {
            let e = facts.entry(k).or_default();
            e.oracle_label = f.oracle_label.or(e.oracle_label);
            e.simple_sat |= f.simple_sat;
        }
    }
    Ok((score_records(&records, &rules, &checks, &facts), checks))
}

fn cmd_score(a: &ScoringArgs, out: Option<&Path>) -> Result<()> {
    let (table, _) = compute_scores(a)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_text(&dir.join("scores.csv"), &table.scores_csv())?;
            write_text(&dir.join("totals.csv"), &table.totals_csv())?;
        }
        None => {
            print!("{}", table.scores_csv());
            print!("{}", table.totals_csv());
        }
    }
    Ok(())
}

fn cmd_report(a: &ScoringArgs, out: &Path, format: FormatArg) -> Result<()> {
    let (table, checks) = compute_scores(a)?;
    let cactus = cactus_data(&table.instances);
    let format = match format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Text => ReportFormat::Text,
    };
    for p in emit_reports(out, &table, &cactus, &checks, format)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_selfcheck() -> Result<()> {
    use crate::netio::load_network_text;
    let net = load_network_text("inputs 2\ndense 2 2\n1 -1 0.5 2\n0 -1\nrelu\ndense 2 2\n1 1 -1 0.5\n0.25 0\n")?;
    let check = |ok: bool, what: &str| -> Result<()> {
        if ok {
            println!("ok   {what}");
            Ok(())
        } else {
            Err(Error::ToolFailure(format!("selfcheck failed: {what}")))
        }
    };
    check(net.evaluate(&[1.0, 1.0])? == vec![1.75, 0.75], "network evaluation")?;
    let sat = parse_vnnlib(
        "(declare-const X_0 Real)(declare-const X_1 Real)(declare-const Y_0 Real)(declare-const Y_1 Real)
         (assert (>= X_0 0))(assert (<= X_0 1))(assert (>= X_1 0))(assert (<= X_1 1))
         (assert (<= Y_0 0.5))",
    )?;
    let out = verify(&net, &sat, &VerifierConfig::default());
    check(out.status == VerifyStatus::Sat, "verify finds a counterexample")?;
    let w = out.witness.expect("sat carries a witness");
    let report = validate_text(&print_witness(&w), &sat, &net, Tolerance::default())?;
    check(report.is_valid(), "witness validates")?;
    let unsat = parse_vnnlib(
        "(declare-const X_0 Real)(declare-const X_1 Real)(declare-const Y_0 Real)(declare-const Y_1 Real)
         (assert (>= X_0 0))(assert (<= X_0 1))(assert (>= X_1 0))(assert (<= X_1 1))
         (assert (<= Y_0 0))",
    )?;
    check(
        verify(&net, &unsat, &VerifierConfig::default()).status == VerifyStatus::Unsat,
        "verify proves unsat",
    )?;
    check(
        print_vnnlib(&parse_vnnlib(&print_vnnlib(&sat))?) == print_vnnlib(&sat),
        "property round trip",
    )?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Inspect { file, canonical } => cmd_inspect(&file, canonical),
        Command::Verify {
            network,
            property,
            timeout,
            result_file,
            verifier,
        } => cmd_verify(&network, &property, timeout, &result_file, &verifier),
        Command::Falsify {
            network,
            property,
            out,
            seed,
        } => cmd_falsify(&network, &property, out.as_deref(), seed),
        Command::ValidateWitness {
            network,
            property,
            witness,
            tau_in,
            tau_out,
        } => cmd_validate(
            &network,
            &property,
            &witness,
            Tolerance {
                input: tau_in,
                output: tau_out,
            },
        ),
        Command::MeasureOverhead {
            command,
            args,
            repeats,
            workdir,
        } => cmd_measure(command, args, repeats, workdir),
        Command::Run { config } => cmd_run(&config),
        Command::Score { scoring, out } => cmd_score(&scoring, out.as_deref()),
        Command::Report { scoring, out, format } => cmd_report(&scoring, &out, format),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
