//! A small robustness benchmark written to disk and a campaign that runs the
//! crate's own `verify` command over it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use vnn_arena::netio::save_onnx;
use vnn_arena::runner::{read_store, RunStatus, VerdictRecord};
use vnn_arena::speclang::print_vnnlib;

use super::suite::robustness_suite;

/// Writes `count` suite instances as ONNX + VNN-LIB files plus an
/// `instances.csv`; returns the CSV path and the exact truth per instance.
pub fn write_desk(dir: &Path, seed: u64, count: usize, timeout: f64) -> (PathBuf, Vec<bool>) {
    std::fs::create_dir_all(dir).unwrap();
    let mut csv = String::new();
    let mut truths = Vec::new();
    for (i, inst) in robustness_suite(seed, count).into_iter().enumerate() {
        let net = format!("net_{i:02}.onnx");
        let prop = format!("prop_{i:02}.vnnlib");
        std::fs::write(dir.join(&net), save_onnx(&inst.net)).unwrap();
        std::fs::write(dir.join(&prop), print_vnnlib(&inst.query)).unwrap();
        csv.push_str(&format!("{net},{prop},{timeout}\n"));
        truths.push(inst.sat);
    }
    let path = dir.join("instances.csv");
    std::fs::write(&path, csv).unwrap();
    (path, truths)
}

pub struct Campaign {
    pub records: Vec<VerdictRecord>,
    /// Report file name to contents.
    pub reports: BTreeMap<String, String>,
    pub store: PathBuf,
}

impl Campaign {
    pub fn statuses(&self) -> Vec<RunStatus> {
        let mut r: Vec<&VerdictRecord> = self.records.iter().collect();
        r.sort_by_key(|r| r.index);
        r.iter().map(|r| r.status).collect()
    }

    /// Witness file contents by instance index.
    pub fn witnesses(&self) -> BTreeMap<usize, String> {
        self.records
            .iter()
            .filter_map(|r| {
                let p = r.witness_path.as_ref()?;
                Some((r.index, std::fs::read_to_string(p).unwrap()))
            })
            .collect()
    }
}

pub fn run_cli(bin: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(bin).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{bin:?} {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs `bin verify --seed <seed>` as the only tool over `instances`, then
/// writes CSV reports under 2022 rules.
pub fn dogfood(bin: &Path, dir: &Path, instances: &Path, seed: u64) -> Campaign {
    std::fs::create_dir_all(dir).unwrap();
    let config = dir.join("campaign.toml");
    let text = format!(
        "workdir = \"work\"\n\
         store = \"work/store.kv\"\n\
         overhead_repeats = 2\n\n\
         [[tool]]\nname = \"refverify\"\ncommand = {bin:?}\nargs = [\"verify\", \"--seed\", \"{seed}\"]\n\n\
         [[benchmark]]\ninstances = {instances:?}\nname = \"desk\"\n"
    );
    std::fs::write(&config, text).unwrap();
    run_cli(bin, &["run", "--config", config.to_str().unwrap()]);
    let store = dir.join("work/store.kv");
    let out = dir.join("reports");
    run_cli(
        bin,
        &[
            "report",
            "--rules",
            "2022",
            "--store",
            store.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    let mut reports = BTreeMap::new();
    for entry in std::fs::read_dir(&out).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        reports.insert(name, std::fs::read_to_string(&p).unwrap());
    }
    Campaign {
        records: read_store(&store).unwrap(),
        reports,
        store,
    }
}

/// `(count, time)` rows of a cactus CSV.
pub fn cactus_rows(csv: &str) -> Vec<(usize, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let (n, t) = l.split_once(',').unwrap();
            (n.parse().unwrap(), t.parse().unwrap())
        })
        .collect()
}

pub fn is_monotone(rows: &[(usize, f64)]) -> bool {
    rows.iter().enumerate().all(|(i, r)| r.0 == i + 1) && rows.windows(2).all(|w| w[0].1 <= w[1].1)
}
