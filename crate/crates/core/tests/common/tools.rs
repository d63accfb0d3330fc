//! Synthetic tools following the adapter contract
//! `tool [args] <network> <property> <timeout> <result_file>`.

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use vnn_arena::runner::InstanceRow;

pub fn write_script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Sleeps `startup` seconds, then for the amount given by a `; work <t>`
/// line in the property file (0 if absent), then answers `unsat`.
pub fn sleep_tool(dir: &Path, name: &str, startup: f64) -> PathBuf {
    write_script(
        dir,
        name,
        &format!(
            "sleep {startup}\n\
             work=$(sed -n 's/^; work //p' \"$2\")\n\
             [ -n \"$work\" ] && sleep \"$work\"\n\
             echo unsat > \"$4\"\n"
        ),
    )
}

/// An instance whose property carries a `; work <t>` line.
pub fn work_instance(dir: &Path, name: &str, work: f64, timeout: f64) -> InstanceRow {
    let network_path = dir.join(format!("{name}.onnx"));
    let spec_path = dir.join(format!("{name}.vnnlib"));
    std::fs::write(&network_path, b"").unwrap();
    std::fs::write(
        &spec_path,
        format!("; work {work}\n(declare-const X_0 Real)\n(declare-const Y_0 Real)\n(assert (>= Y_0 0))\n"),
    )
    .unwrap();
    InstanceRow {
        benchmark: "synthetic".into(),
        network_path,
        spec_path,
        timeout,
    }
}

/// True if the process no longer exists or is a zombie.
pub fn process_gone(pid: u32) -> bool {
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Err(_) => true,
        Ok(stat) => {
            let state = stat.rsplit_once(')').and_then(|(_, r)| r.trim_start().chars().next());
            matches!(state, Some('Z') | Some('X'))
        }
    }
}

/// A tool that spawns a grandchild, ignores SIGTERM and never finishes.
/// Both pids are written to `pid_file`.
pub fn stubborn_tool(dir: &Path, pid_file: &Path) -> PathBuf {
    write_script(
        dir,
        "stubborn.sh",
        &format!(
            "trap '' TERM\n\
             sleep 1000 &\n\
             echo $$ $! > {}\n\
             while true; do sleep 0.1; done\n",
            pid_file.display()
        ),
    )
}

/// A tool that spawns a grandchild and loops forever, with default signal
/// handling. Both pids are written to `pid_file`.
pub fn endless_tool(dir: &Path, pid_file: &Path) -> PathBuf {
    write_script(
        dir,
        "endless.sh",
        &format!(
            "sleep 1000 &\n\
             echo $$ $! > {}\n\
             while true; do sleep 0.1; done\n",
            pid_file.display()
        ),
    )
}
