//! Checks local robustness of a small ReLU network at a few radii with the
//! reference verifier.

use std::time::Duration;

use vnn_arena::netio::load_network_text;
use vnn_arena::refverify::{verify, VerifierConfig};
use vnn_arena::speclang::{make_robustness_query, RobustnessParams};

// Two-input, two-class ReLU network whose decision boundary crosses the box.
const TEXT_NET: &str = "inputs 2\ndense 2 2\n1 -1 0.5 2\n0 -1\nrelu\ndense 2 2\n1 -1 -1 0.5\n0.25 0\n";

fn main() -> vnn_arena::Result<()> {
    let net = load_network_text(TEXT_NET)?;
    let center = vec![0.2, 0.8];
    let y = net.evaluate(&center)?;
    let target = if y[0] >= y[1] { 0 } else { 1 };
    println!("f(center) = {y:?}, predicted class {target}");

    let config = VerifierConfig {
        time_budget: Duration::from_secs(10),
        ..VerifierConfig::with_seed(1)
    };
    for eps in [0.05, 0.2, 0.5, 1.0] {
        let query = make_robustness_query(&RobustnessParams::new(center.clone(), eps, target), 2, 2)?;
        let out = verify(&net, &query, &config);
        let verdict = match out.status.as_str() {
            "unsat" => "robust",
            "sat" => "not robust",
            _ => "undecided",
        };
        println!(
            "eps {eps:<4}: {} ({verdict}), {} subproblem(s){}",
            out.status,
            out.stats.subproblems,
            out.witness
                .map(|w| format!(", counterexample x = {:?}", w.x))
                .unwrap_or_default()
        );
    }
    Ok(())
}
