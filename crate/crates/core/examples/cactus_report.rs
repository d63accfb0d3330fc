//! Scores a campaign and writes every report (rankings, cactus series and
//! audit files) to a directory given as argument, or to a temporary one.

use std::collections::BTreeMap;
use std::path::PathBuf;

use vnn_arena::report::{cactus_data, emit_reports, ReportFormat};
use vnn_arena::runner::{RunStatus, VerdictRecord};
use vnn_arena::scoring::{score_records, RuleSet, WitnessChecks};

fn main() -> vnn_arena::Result<()> {
    let statuses = [
        RunStatus::Unsat,
        RunStatus::Unsat,
        RunStatus::Unknown,
        RunStatus::Timeout,
    ];
    let mut records = Vec::new();
    for (t, tool) in ["fast", "steady", "slow"].iter().enumerate() {
        for index in 0..8 {
            let status = statuses[(index + t) % statuses.len()];
            let runtime = 0.3 * (index + 1) as f64 * (t + 1) as f64;
            records.push(VerdictRecord {
                tool: tool.to_string(),
                benchmark: "demo".into(),
                index,
                status,
                raw_runtime: runtime,
                adjusted_runtime: runtime,
                witness_path: None,
                network: "net.onnx".into(),
                property: "prop.vnnlib".into(),
                start: 0.0,
                end: runtime,
                diagnostics: String::new(),
            });
        }
    }
    let checks = WitnessChecks::new();
    let table = score_records(&records, &RuleSet::r2021(), &checks, &BTreeMap::new());
    let cactus = cactus_data(&table.instances);
    for s in &cactus {
        println!("{}: {:?}", s.tool, s.points);
    }

    let tmp;
    let out = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            tmp = tempfile::tempdir().map_err(|e| vnn_arena::Error::io("temp dir", e))?;
            tmp.path().to_path_buf()
        }
    };
    for path in emit_reports(&out, &table, &cactus, &checks, ReportFormat::Text)? {
        println!("\n--- {}", path.display());
        print!(
            "{}",
            std::fs::read_to_string(&path).map_err(|e| vnn_arena::Error::io(&path, e))?
        );
    }
    Ok(())
}
