//! Runs a toy tool over a two-instance benchmark: writes a shell tool that
//! follows the adapter contract, measures its startup overhead and records
//! verdicts in a resumable store.

use std::os::unix::fs::PermissionsExt;

use vnn_arena::runner::{
    load_instances, measure_overhead, run_campaign, write_trivial_instance, RunOptions, ToolAdapter, VerdictStore,
};

fn main() -> vnn_arena::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| vnn_arena::Error::io("temp dir", e))?;
    let root = dir.path();
    let write = |name: &str, body: &str| std::fs::write(root.join(name), body).expect("write into temp dir");

    // Answers `sat` when the property mentions "sat-me", otherwise `unsat`.
    write(
        "tool.sh",
        "#!/bin/sh\nsleep 0.2\nif grep -q sat-me \"$2\"; then echo sat > \"$4\"; else echo unsat > \"$4\"; fi\n",
    );
    std::fs::set_permissions(root.join("tool.sh"), std::fs::Permissions::from_mode(0o755)).expect("chmod in temp dir");
    write("net.txt", "inputs 1\n");
    write(
        "a.vnnlib",
        "; sat-me\n(declare-const X_0 Real)\n(declare-const Y_0 Real)\n(assert (>= Y_0 0))\n",
    );
    write(
        "b.vnnlib",
        "(declare-const X_0 Real)\n(declare-const Y_0 Real)\n(assert (>= Y_0 1))\n",
    );
    let instances = load_instances("net.txt,a.vnnlib,5\nnet.txt,b.vnnlib,5\n", "toy", root)?;

    let opts = RunOptions::new(root);
    let mut tool = ToolAdapter::new("shell-tool", root.join("tool.sh"));
    let trivial = write_trivial_instance(&root.join("trivial"))?;
    let overhead = measure_overhead(&mut tool, &trivial, 3, &opts)?;
    println!("overhead {overhead:.3} s");

    let mut store = VerdictStore::open(root.join("store.kv"))?;
    let added = run_campaign(&[tool.clone()], &instances, &mut store, &opts)?;
    println!("{added} new record(s)");
    for r in store.records() {
        println!(
            "{} {}#{}: {} raw {:.3} s, adjusted {:.3} s",
            r.tool, r.benchmark, r.index, r.status, r.raw_runtime, r.adjusted_runtime
        );
    }
    // Running again skips the instances already in the store.
    println!("rerun added {}", run_campaign(&[tool], &instances, &mut store, &opts)?);
    Ok(())
}
