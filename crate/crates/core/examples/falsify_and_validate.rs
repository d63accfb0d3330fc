//! Searches for a counterexample with the PGD attack, writes it in the
//! standard witness format and validates it, then shows how a tampered
//! witness is rejected.

use vnn_arena::netio::load_network_text;
use vnn_arena::refverify::{pgd_attack, VerifierConfig};
use vnn_arena::speclang::parse_vnnlib;
use vnn_arena::witness::{parse_witness, print_witness, validate, Tolerance};

const TEXT_NET: &str = "inputs 2\ndense 2 2\n1 -1 0.5 2\n0 -1\nrelu\ndense 2 2\n1 1 -1 0.5\n0.25 0\n";

const PROPERTY: &str = "\
(declare-const X_0 Real)
(declare-const X_1 Real)
(declare-const Y_0 Real)
(declare-const Y_1 Real)
(assert (>= X_0 0))
(assert (<= X_0 1))
(assert (>= X_1 0))
(assert (<= X_1 1))
(assert (<= Y_0 0.5))
";

fn main() -> vnn_arena::Result<()> {
    let net = load_network_text(TEXT_NET)?;
    let query = parse_vnnlib(PROPERTY)?;
    let Some(witness) = pgd_attack(&net, &query, &VerifierConfig::with_seed(3)) else {
        println!("no counterexample found");
        return Ok(());
    };
    let text = print_witness(&witness);
    println!("witness:\n{text}");

    let parsed = parse_witness(&text, net.d_in(), net.d_out())?;
    let report = validate(&parsed, &query, &net, Tolerance::default())?;
    println!("{}", report.to_kv());

    let mut moved = parsed.clone();
    moved.x[0] = 1.5;
    let report = validate(&moved, &query, &net, Tolerance::default())?;
    println!("moved outside the box: {}", report.verdict);
    Ok(())
}
