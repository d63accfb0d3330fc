//! Parses a VNN-LIB property (from a file argument or a built-in sample),
//! prints its disjunctive normal form and a robustness query built in code.

use vnn_arena::speclang::{make_robustness_query, parse_vnnlib, print_vnnlib, RobustnessParams};

const SAMPLE: &str = "\
(declare-const X_0 Real)
(declare-const X_1 Real)
(declare-const Y_0 Real)
(declare-const Y_1 Real)
(declare-const Y_2 Real)
(assert (>= X_0 -0.1))
(assert (<= X_0 0.1))
(assert (>= X_1 0.4))
(assert (<= X_1 0.6))
(assert (or (and (>= Y_1 Y_0)) (and (>= Y_2 Y_0))))
";

fn main() -> vnn_arena::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).map_err(|e| vnn_arena::Error::io(&path, e))?,
        None => SAMPLE.to_string(),
    };
    let query = parse_vnnlib(&text)?;
    println!("{} inputs, {} outputs", query.num_inputs(), query.num_outputs());
    for (i, d) in query.disjuncts().iter().enumerate() {
        println!(
            "disjunct {i}: box {:?}..{:?}, {} output constraint(s)",
            d.input_box.lower,
            d.input_box.upper,
            d.output_constraints.len()
        );
    }
    println!("\ncanonical form:\n{}", print_vnnlib(&query));

    let built = make_robustness_query(&RobustnessParams::new(vec![0.0, 0.5], 0.1, 0), 2, 3)?;
    println!("robustness query built in code:\n{}", print_vnnlib(&built));
    Ok(())
}
