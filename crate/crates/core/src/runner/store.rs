//! Append-only verdict store.
//!
//! One record per line, tab-separated `key=value` fields in this order:
//! `tool benchmark index status raw_runtime adjusted_runtime witness network
//! property start end diagnostics`. Tabs, newlines and backslashes inside
//! values are escaped as `\t`, `\n` and `\\`; an absent witness is written
//! as `witness=-`.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{RunStatus, VerdictRecord};
use crate::error::{Error, Result};

const FIELDS: [&str; 12] = [
    "tool",
    "benchmark",
    "index",
    "status",
    "raw_runtime",
    "adjusted_runtime",
    "witness",
    "network",
    "property",
    "start",
    "end",
    "diagnostics",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Serializes one record as a store line, without the trailing newline.
pub fn format_record(r: &VerdictRecord) -> String {
    let path = |p: &Path| p.display().to_string();
    let values = [
        r.tool.clone(),
        r.benchmark.clone(),
        r.index.to_string(),
        r.status.as_str().to_string(),
        format!("{:?}", r.raw_runtime),
        format!("{:?}", r.adjusted_runtime),
        r.witness_path.as_deref().map(path).unwrap_or_else(|| "-".into()),
        path(&r.network),
        path(&r.property),
        format!("{:?}", r.start),
        format!("{:?}", r.end),
        r.diagnostics.clone(),
    ];
    FIELDS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={}", escape(&v)))
        .collect::<Vec<_>>()
        .join("\t")
}

/// Parses one store line.
pub fn parse_record(line: &str) -> Result<VerdictRecord> {
    let bad = |msg: String| Error::Malformed(format!("verdict record: {msg}"));
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != FIELDS.len() {
        return Err(bad(format!("expected {} fields, found {}", FIELDS.len(), parts.len())));
    }
    let mut values = Vec::with_capacity(FIELDS.len());
    for (part, key) in parts.iter().zip(FIELDS) {
        let v = part
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .ok_or_else(|| bad(format!("expected field '{key}', found '{part}'")))?;
        values.push(unescape(v));
    }
    let num = |i: usize| -> Result<f64> {
        values[i]
            .parse::<f64>()
            .map_err(|_| bad(format!("{} is not a number: '{}'", FIELDS[i], values[i])))
    };
    Ok(VerdictRecord {
        tool: values[0].clone(),
        benchmark: values[1].clone(),
        index: values[2]
            .parse()
            .map_err(|_| bad(format!("index is not an integer: '{}'", values[2])))?,
        status: RunStatus::parse(&values[3]).ok_or_else(|| bad(format!("unknown status '{}'", values[3])))?,
        raw_runtime: num(4)?,
        adjusted_runtime: num(5)?,
        witness_path: (values[6] != "-").then(|| PathBuf::from(&values[6])),
        network: PathBuf::from(&values[7]),
        property: PathBuf::from(&values[8]),
        start: num(9)?,
        end: num(10)?,
        diagnostics: values[11].clone(),
    })
}

/// Parses a whole store; blank lines are skipped.
pub fn parse_store(text: &str) -> Result<Vec<VerdictRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_record)
        .collect()
}

/// A verdict store file opened for appending.
#[derive(Debug)]
pub struct VerdictStore {
    path: PathBuf,
    records: Vec<VerdictRecord>,
    file: File,
}

impl VerdictStore {
    /// Opens or creates the store. A final line left incomplete by an
    /// interrupted write is discarded.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        let records = parse_store(complete)?;
        if complete.len() != text.len() {
            let f = OpenOptions::new()
                .write(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            f.set_len(complete.len() as u64).map_err(|e| Error::io(&path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(VerdictStore { path, records, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[VerdictRecord] {
        &self.records
    }

    pub fn contains(&self, tool: &str, benchmark: &str, index: usize) -> bool {
        self.records
            .iter()
            .any(|r| r.tool == tool && r.benchmark == benchmark && r.index == index)
    }

    /// Appends and syncs one record.
    pub fn append(&mut self, record: VerdictRecord) -> Result<()> {
        let line = format_record(&record) + "\n";
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        self.records.push(record);
        Ok(())
    }
}

/// Reads all records of a store file.
pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<VerdictRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_store(&text)
}
