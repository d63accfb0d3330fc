//! Loads a network (an .onnx path argument, or a small built-in text
//! network), evaluates it, takes an input gradient and bounds it with IBP.

use vnn_arena::netio::{load_network, load_network_text, Objective};
use vnn_arena::refverify::ibp_bounds;
use vnn_arena::speclang::InputBox;

const TEXT_NET: &str = "inputs 2\ndense 2 2\n1 -1 0.5 2\n0 -1\nrelu\ndense 2 2\n1 1 -1 0.5\n0.25 0\n";

fn main() -> vnn_arena::Result<()> {
    let net = match std::env::args().nth(1) {
        Some(path) => load_network(path)?,
        None => load_network_text(TEXT_NET)?,
    };
    println!("{}", net.summary());

    let x = vec![0.5; net.d_in()];
    let y = net.evaluate(&x)?;
    println!("f({x:?}) = {y:?}");
    let g = net.input_gradient(&x, &Objective::Output(0))?;
    println!("d y_0 / dx = {g:?}");

    let lower = x.iter().map(|v| v - 0.25).collect();
    let upper = x.iter().map(|v| v + 0.25).collect();
    let bounds = ibp_bounds(&net, &InputBox::new(lower, upper)?)?;
    for j in 0..net.d_out() {
        println!("y_{j} in [{:.4}, {:.4}] on the box", bounds.lower[j], bounds.upper[j]);
    }
    Ok(())
}
