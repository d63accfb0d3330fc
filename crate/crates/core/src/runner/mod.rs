//! Running entrant tools over instance lists.
//!
//! A tool is invoked as
//! `run_command [args...] <network> <property> <timeout> <result_file>` in a
//! fresh scratch directory (also exported as `VNN_ARENA_WORKDIR`). Line 1 of
//! the result file holds the verdict; for `sat` the following lines hold the
//! witness. Runs are strictly sequential.

mod store;

use std::fmt;
use std::fs;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::error::{Error, Pos, Result};
use crate::netio::{save_onnx, GraphBuilder, Op, Tensor};

pub use store::{format_record, parse_record, parse_store, read_store, VerdictStore};

/// Environment variable naming the per-instance scratch directory.
pub const WORKDIR_ENV: &str = "VNN_ARENA_WORKDIR";

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRow {
    pub benchmark: String,
    pub network_path: PathBuf,
    pub spec_path: PathBuf,
    /// Seconds.
    pub timeout: f64,
}

/// Parses an instance list: `network_path,spec_path,timeout_seconds` per
/// line, `#` comments allowed. Relative paths resolve against `base_dir`.
/// Referenced files must exist.
pub fn load_instances(csv_text: &str, benchmark: &str, base_dir: &Path) -> Result<Vec<InstanceRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::syntax(Pos { line, col: 1 }, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let at = |msg: String| Error::syntax(Pos { line, col: 1 }, msg);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 3 {
            return Err(at(format!(
                "expected network_path,spec_path,timeout_seconds; found {} fields",
                rec.len()
            )));
        }
        let timeout: f64 = rec[2]
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t > 0.0)
            .ok_or_else(|| at(format!("timeout '{}' is not a positive number of seconds", &rec[2])))?;
        let resolve = |p: &str| -> Result<PathBuf> {
            if p.is_empty() {
                return Err(at("empty path".into()));
            }
            let path = base_dir.join(p);
            if path.is_file() {
                Ok(path)
            } else {
                Err(Error::MissingFile(path))
            }
        };
        rows.push(InstanceRow {
            benchmark: benchmark.to_string(),
            network_path: resolve(&rec[0])?,
            spec_path: resolve(&rec[1])?,
            timeout,
        });
    }
    Ok(rows)
}

/// Reads an instance list file; the benchmark is named after the file's
/// directory.
pub fn load_instances_file(path: &Path) -> Result<Vec<InstanceRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = dir
        .canonicalize()
        .ok()
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "benchmark".into());
    load_instances(&text, &name, dir)
}

/// Checks that every row's network and property load and agree in
/// dimensions.
pub fn preflight(rows: &[InstanceRow]) -> Result<()> {
    for row in rows {
        let net = crate::netio::load_network(&row.network_path)?;
        let text = fs::read_to_string(&row.spec_path).map_err(|e| Error::io(&row.spec_path, e))?;
        let query = crate::speclang::parse_vnnlib(&text)?;
        query.check_dimensions(net.d_in(), net.d_out())?;
    }
    Ok(())
}

/// Writes a one-neuron identity network and a property it satisfies
/// instantly into `dir`; used for overhead measurement.
pub fn write_trivial_instance(dir: &Path) -> Result<InstanceRow> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut b = GraphBuilder::new(vec![1])?;
    b.chain(Op::Dense {
        weight: Tensor::new(vec![1, 1], vec![1.0])?,
        bias: vec![0.0],
    })?;
    let net = b.finish()?;
    let network_path = dir.join("trivial.onnx");
    let spec_path = dir.join("trivial.vnnlib");
    fs::write(&network_path, save_onnx(&net)).map_err(|e| Error::io(&network_path, e))?;
    let spec = "(declare-const X_0 Real)\n(declare-const Y_0 Real)\n\
                (assert (>= X_0 0.0))\n(assert (<= X_0 1.0))\n(assert (>= Y_0 2.0))\n";
    fs::write(&spec_path, spec).map_err(|e| Error::io(&spec_path, e))?;
    Ok(InstanceRow {
        benchmark: "trivial".into(),
        network_path,
        spec_path,
        timeout: 60.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolAdapter {
    pub name: String,
    /// Run once per instance before the timed command, with the network and
    /// property paths as arguments.
    pub prepare_command: Option<PathBuf>,
    pub run_command: PathBuf,
    /// Extra arguments placed before the standard four.
    pub args: Vec<String>,
    /// Measured startup overhead in seconds.
    pub overhead: Option<f64>,
}

impl ToolAdapter {
    pub fn new(name: impl Into<String>, run_command: impl Into<PathBuf>) -> Self {
        ToolAdapter {
            name: name.into(),
            prepare_command: None,
            run_command: run_command.into(),
            args: Vec::new(),
            overhead: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RunStatus {
    Sat,
    Unsat,
    Unknown,
    Timeout,
    Error,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Sat => "sat",
            RunStatus::Unsat => "unsat",
            RunStatus::Unknown => "unknown",
            RunStatus::Timeout => "timeout",
            RunStatus::Error => "error",
        }
    }

    /// Case-insensitive.
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "sat" => RunStatus::Sat,
            "unsat" => RunStatus::Unsat,
            "unknown" => RunStatus::Unknown,
            "timeout" => RunStatus::Timeout,
            "error" => RunStatus::Error,
            _ => return None,
        })
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRecord {
    pub tool: String,
    pub benchmark: String,
    pub index: usize,
    pub status: RunStatus,
    pub raw_runtime: f64,
    pub adjusted_runtime: f64,
    pub witness_path: Option<PathBuf>,
    pub network: PathBuf,
    pub property: PathBuf,
    /// Unix timestamps in seconds.
    pub start: f64,
    pub end: f64,
    pub diagnostics: String,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Parent of the per-instance scratch directories.
    pub work_root: PathBuf,
    /// Where witnesses from `sat` results are kept.
    pub witness_dir: PathBuf,
    /// Time between the termination request and the forced kill.
    pub grace: Duration,
    pub keep_scratch: bool,
}

impl RunOptions {
    pub fn new(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        RunOptions {
            work_root: root.join("work"),
            witness_dir: root.join("witnesses"),
            grace: Duration::from_secs(5),
            keep_scratch: false,
        }
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn signal_group(child: &Child, sig: libc::c_int) {
    // The child leads its own process group, so its pid is the group id.
    unsafe {
        libc::killpg(child.id() as libc::pid_t, sig);
    }
}

enum Ended {
    Exited(ExitStatus),
    TimedOut,
}

/// Waits for `child`; after `limit` the group gets SIGTERM, after a further
/// `grace` SIGKILL. Any leftover group members are killed afterwards.
fn supervise(child: &mut Child, limit: Duration, grace: Duration) -> std::io::Result<Ended> {
    let start = Instant::now();
    let mut terminated = false;
    let ended = loop {
        if let Some(status) = child.try_wait()? {
            break if terminated {
                Ended::TimedOut
            } else {
                Ended::Exited(status)
            };
        }
        let elapsed = start.elapsed();
        if !terminated && elapsed >= limit {
            signal_group(child, libc::SIGTERM);
            terminated = true;
        }
        if terminated && elapsed >= limit + grace {
            signal_group(child, libc::SIGKILL);
            child.wait()?;
            break Ended::TimedOut;
        }
        sleep(Duration::from_millis(5));
    };
    signal_group(child, libc::SIGKILL);
    Ok(ended)
}

fn quote_prefix(bytes: &[u8]) -> String {
    let cut = bytes.len().min(200);
    format!("{:?}", String::from_utf8_lossy(&bytes[..cut]))
}

fn tail(path: &Path) -> String {
    let text = fs::read(path).unwrap_or_default();
    let from = text.len().saturating_sub(300);
    String::from_utf8_lossy(&text[from..]).trim().to_string()
}

/// Runs one instance. Failures of any kind become `Error` records.
pub fn run_instance(tool: &ToolAdapter, row: &InstanceRow, index: usize, opts: &RunOptions) -> VerdictRecord {
    let mut record = VerdictRecord {
        tool: tool.name.clone(),
        benchmark: row.benchmark.clone(),
        index,
        status: RunStatus::Error,
        raw_runtime: 0.0,
        adjusted_runtime: 0.0,
        witness_path: None,
        network: row.network_path.clone(),
        property: row.spec_path.clone(),
        start: unix_now(),
        end: 0.0,
        diagnostics: String::new(),
    };
    let scratch = opts
        .work_root
        .join(sanitize(&tool.name))
        .join(format!("{}-{index}", sanitize(&row.benchmark)));
    if let Err(msg) = execute(tool, row, &scratch, opts, &mut record) {
        record.status = RunStatus::Error;
        record.diagnostics = msg;
    }
    if record.end == 0.0 {
        record.end = unix_now();
    }
    record.adjusted_runtime = (record.raw_runtime - tool.overhead.unwrap_or(0.0)).max(0.0);
    if !opts.keep_scratch {
        let _ = fs::remove_dir_all(&scratch);
    }
    record
}

fn execute(
    tool: &ToolAdapter,
    row: &InstanceRow,
    scratch: &Path,
    opts: &RunOptions,
    record: &mut VerdictRecord,
) -> std::result::Result<(), String> {
    let _ = fs::remove_dir_all(scratch);
    fs::create_dir_all(scratch).map_err(|e| format!("cannot create {}: {e}", scratch.display()))?;
    let abs = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    let (network, property) = (abs(&row.network_path), abs(&row.spec_path));
    let log = |name: &str| {
        fs::File::create(scratch.join(name))
            .map(Stdio::from)
            .map_err(|e| format!("cannot create log: {e}"))
    };

    if let Some(prep) = &tool.prepare_command {
        let status = Command::new(prep)
            .arg(&network)
            .arg(&property)
            .current_dir(scratch)
            .env(WORKDIR_ENV, scratch)
            .stdin(Stdio::null())
            .stdout(log("prepare.out")?)
            .stderr(log("prepare.err")?)
            .status()
            .map_err(|e| format!("cannot start {}: {e}", prep.display()))?;
        if !status.success() {
            return Err(format!(
                "prepare command failed ({status}): {}",
                tail(&scratch.join("prepare.err"))
            ));
        }
    }

    let result_file = scratch.join("result.txt");
    let mut cmd = Command::new(&tool.run_command);
    cmd.args(&tool.args)
        .arg(&network)
        .arg(&property)
        .arg(format!("{}", row.timeout))
        .arg(&result_file)
        .current_dir(scratch)
        .env(WORKDIR_ENV, scratch)
        .stdin(Stdio::null())
        .stdout(log("stdout.txt")?)
        .stderr(log("stderr.txt")?)
        .process_group(0);

    record.start = unix_now();
    let started = Instant::now();
    let mut child = cmd
        .spawn()
        .map_err(|e| format!("cannot start {}: {e}", tool.run_command.display()))?;
    let limit = Duration::from_secs_f64(row.timeout);
    let ended = supervise(&mut child, limit, opts.grace);
    record.raw_runtime = started.elapsed().as_secs_f64();
    record.end = unix_now();
    let ended = ended.map_err(|e| format!("waiting for tool failed: {e}"))?;

    let exit = match ended {
        Ended::TimedOut => {
            record.status = RunStatus::Timeout;
            record.diagnostics = format!("terminated after {:.3} s", record.raw_runtime);
            return Ok(());
        }
        Ended::Exited(status) => status,
    };
    if record.raw_runtime > row.timeout {
        record.status = RunStatus::Timeout;
        record.diagnostics = format!("finished after the {} s limit", row.timeout);
        return Ok(());
    }

    let bytes = match fs::read(&result_file) {
        Ok(b) => b,
        Err(_) => {
            return Err(format!(
                "no result file (exit {exit}); stderr: {}",
                tail(&scratch.join("stderr.txt"))
            ))
        }
    };
    let text = String::from_utf8_lossy(&bytes);
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let status = first
        .split_whitespace()
        .next()
        .and_then(RunStatus::parse)
        .ok_or_else(|| format!("unrecognized result file: {}", quote_prefix(&bytes)))?;
    record.status = status;
    if status == RunStatus::Sat {
        if rest.trim().is_empty() {
            record.diagnostics = "sat reported without a witness".into();
        } else {
            fs::create_dir_all(&opts.witness_dir).map_err(|e| format!("cannot create witness dir: {e}"))?;
            let dest = opts.witness_dir.join(format!(
                "{}__{}__{}.txt",
                sanitize(&tool.name),
                sanitize(&row.benchmark),
                record.index
            ));
            fs::write(&dest, rest).map_err(|e| format!("cannot store witness: {e}"))?;
            record.witness_path = Some(dest);
        }
    }
    if !exit.success() && record.diagnostics.is_empty() {
        record.diagnostics = format!("tool exited with {exit}");
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median raw runtime of `repeats` runs on a trivial instance, stored on
/// the adapter.
pub fn measure_overhead(
    tool: &mut ToolAdapter,
    trivial: &InstanceRow,
    repeats: usize,
    opts: &RunOptions,
) -> Result<f64> {
    let probe = ToolAdapter {
        overhead: None,
        ..tool.clone()
    };
    let mut times = Vec::with_capacity(repeats.max(1));
    for i in 0..repeats.max(1) {
        let r = run_instance(&probe, trivial, i, opts);
        if matches!(r.status, RunStatus::Error | RunStatus::Timeout) {
            return Err(Error::ToolFailure(format!(
                "{} failed on the trivial instance ({}): {}",
                tool.name, r.status, r.diagnostics
            )));
        }
        times.push(r.raw_runtime);
    }
    let overhead = median(times);
    tool.overhead = Some(overhead);
    Ok(overhead)
}

/// Runs every tool over every instance, one tool at a time, skipping pairs
/// already in the store. Returns the number of new records.
pub fn run_campaign(
    tools: &[ToolAdapter],
    instances: &[InstanceRow],
    store: &mut VerdictStore,
    opts: &RunOptions,
) -> Result<usize> {
    if let Some(t) = tools.iter().find(|t| t.overhead.is_none()) {
        return Err(Error::Config(format!(
            "overhead of tool '{}' has not been measured",
            t.name
        )));
    }
    let mut added = 0;
    for tool in tools {
        // Indices count within each benchmark, in list order.
        let mut next_index: Vec<(String, usize)> = Vec::new();
        for row in instances {
            let index = match next_index.iter_mut().find(|(b, _)| *b == row.benchmark) {
                Some((_, i)) => {
                    *i += 1;
                    *i
                }
                None => {
                    next_index.push((row.benchmark.clone(), 0));
                    0
                }
            };
            if store.contains(&tool.name, &row.benchmark, index) {
                continue;
            }
            let record = run_instance(tool, row, index, opts);
            store.append(record)?;
            added += 1;
        }
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_list_parsing() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.onnx", "a.vnnlib", "b.vnnlib"] {
            fs::write(dir.path().join(f), "").unwrap();
        }
        let text = "# header\na.onnx, a.vnnlib, 10\n\na.onnx,b.vnnlib,2.5\na.onnx,a.vnnlib,1e2\n";
        let rows = load_instances(text, "b", dir.path()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].spec_path, dir.path().join("b.vnnlib"));
        assert_eq!(rows[2].timeout, 100.0);

        match load_instances("a.onnx,a.vnnlib,10\na.onnx,a.vnnlib,soon\n", "b", dir.path()) {
            Err(Error::Syntax { pos, .. }) => assert_eq!(pos.line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_instances("a.onnx,a.vnnlib,0\n", "b", dir.path()),
            Err(Error::Syntax { .. })
        ));
        assert!(matches!(
            load_instances("missing.onnx,a.vnnlib,1\n", "b", dir.path()),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn status_parsing_is_case_insensitive() {
        assert_eq!(RunStatus::parse("UNSAT"), Some(RunStatus::Unsat));
        assert_eq!(RunStatus::parse("Sat"), Some(RunStatus::Sat));
        assert_eq!(RunStatus::parse("holds"), None);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }

    #[test]
    fn trivial_instance_loads() {
        let dir = tempfile::tempdir().unwrap();
        let row = write_trivial_instance(dir.path()).unwrap();
        preflight(&[row]).unwrap();
    }
}
