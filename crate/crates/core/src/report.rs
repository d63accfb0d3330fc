//! Cactus-plot data, ranking tables and per-instance audit files.
//!
//! All output is a pure function of its inputs: rows are sorted and numbers
//! are printed with six significant digits.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scoring::{format_number, InstanceScore, RecordKey, ScoreTable, WitnessChecks};

#[derive(Debug, Clone, PartialEq)]
pub struct CactusSeries {
    pub tool: String,
    /// `(solved_count, time)` with count rising by one per point.
    pub points: Vec<(usize, f64)>,
}

/// One series per tool: adjusted runtimes of correctly solved instances,
/// sorted ascending, against the running count.
pub fn cactus_data(instances: &[InstanceScore]) -> Vec<CactusSeries> {
    let mut by_tool: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in instances {
        let times = by_tool.entry(&s.tool).or_default();
        if s.is_correct() {
            times.push(s.runtime);
        }
    }
    by_tool
        .into_iter()
        .map(|(tool, mut times)| {
            times.sort_by(f64::total_cmp);
            CactusSeries {
                tool: tool.to_string(),
                points: times.into_iter().enumerate().map(|(i, t)| (i + 1, t)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Text,
}

fn num(v: f64) -> String {
    format_number(v, 6)
}

/// File-name-safe version of a tool or benchmark name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Left-aligned columns separated by two spaces.
fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn render_table(format: ReportFormat, header: &[&str], rows: Vec<Vec<String>>) -> String {
    match format {
        ReportFormat::Text => text_table(header, &rows),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).expect("in-memory write");
            for r in &rows {
                w.write_record(r).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
        }
    }
}

/// Renders the per-benchmark audit: truth, per-tool verdicts, points and
/// witness outcomes for every instance.
pub fn audit_text(table: &ScoreTable, checks: &WitnessChecks, benchmark: &str) -> String {
    let mut out = String::new();
    let year = match table.rules.year {
        crate::scoring::Year::R2021 => 2021,
        crate::scoring::Year::R2022 => 2022,
    };
    let _ = writeln!(out, "benchmark {benchmark}");
    let _ = writeln!(out, "rules {year}");
    if let Some(max) = table.max_points.get(benchmark) {
        let _ = writeln!(out, "max_points {}", num(*max));
    }
    let mut by_index: BTreeMap<usize, Vec<&InstanceScore>> = BTreeMap::new();
    for s in table.instances.iter().filter(|s| s.benchmark == benchmark) {
        by_index.entry(s.index).or_default().push(s);
    }
    for (index, mut scores) in by_index {
        scores.sort_by(|a, b| a.tool.cmp(&b.tool));
        let truth = table
            .truths
            .iter()
            .find(|t| t.instance.benchmark == benchmark && t.instance.index == index);
        match truth {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "instance {index} truth={} basis={} simple_sat={}",
                    t.label,
                    t.basis.as_str(),
                    u8::from(t.simple_sat)
                );
            }
            None => {
                let _ = writeln!(out, "instance {index} truth=undetermined basis=none simple_sat=0");
            }
        }
        for s in scores {
            let key = RecordKey {
                tool: s.tool.clone(),
                benchmark: s.benchmark.clone(),
                index: s.index,
            };
            let witness = checks.get(&key).map(|v| v.as_str()).unwrap_or("-");
            let _ = writeln!(
                out,
                "  {} status={} runtime={} points={} bonus={} witness={witness}",
                s.tool,
                s.status,
                num(s.runtime),
                num(s.base),
                num(s.bonus)
            );
        }
    }
    out
}

/// Every report as `(file name, contents)`, in a fixed order.
pub fn render_reports(
    table: &ScoreTable,
    cactus: &[CactusSeries],
    checks: &WitnessChecks,
    format: ReportFormat,
) -> Vec<(String, String)> {
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Text => "txt",
    };
    let mut files = Vec::new();
    let scores = table
        .cells
        .iter()
        .map(|c| vec![c.tool.clone(), c.benchmark.clone(), num(c.points), num(c.percent)])
        .collect();
    files.push((
        format!("scores.{ext}"),
        render_table(format, &["tool", "benchmark", "points", "percent"], scores),
    ));
    let totals = table
        .totals
        .iter()
        .map(|t| vec![t.rank.to_string(), t.tool.clone(), num(t.total), t.solved.to_string()])
        .collect();
    files.push((
        format!("totals.{ext}"),
        render_table(format, &["rank", "tool", "total", "solved"], totals),
    ));
    for series in cactus {
        let rows = series
            .points
            .iter()
            .map(|(n, t)| vec![n.to_string(), num(*t)])
            .collect();
        files.push((
            format!("cactus_{}.{ext}", file_stem(&series.tool)),
            render_table(format, &["count", "time"], rows),
        ));
    }
    for bench in table.max_points.keys() {
        files.push((
            format!("audit_{}.txt", file_stem(bench)),
            audit_text(table, checks, bench),
        ));
    }
    files
}

/// Writes all reports into `out_dir` and returns the written paths.
pub fn emit_reports(
    out_dir: &Path,
    table: &ScoreTable,
    cactus: &[CactusSeries],
    checks: &WitnessChecks,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = Vec::new();
    for (name, contents) in render_reports(table, cactus, checks, format) {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
