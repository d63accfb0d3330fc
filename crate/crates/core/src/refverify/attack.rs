//! Projected signed-gradient attack on one disjunct.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::netio::{NetworkGraph, Objective};
use crate::speclang::{Disjunct, InputBox, Relation};

/// Finite box used for starting points and step sizes: infinite ends are
/// replaced one unit beyond the finite end, or by `[-1, 1]`.
pub(crate) fn finite_box(b: &InputBox) -> InputBox {
    let (mut lower, mut upper) = (b.lower.clone(), b.upper.clone());
    for i in 0..lower.len() {
        match (lower[i].is_finite(), upper[i].is_finite()) {
            (true, true) => {}
            (true, false) => upper[i] = lower[i] + 1.0,
            (false, true) => lower[i] = upper[i] - 1.0,
            (false, false) => {
                lower[i] = -1.0;
                upper[i] = 1.0;
            }
        }
    }
    InputBox { lower, upper }
}

pub(crate) struct Schedule {
    pub steps: usize,
    pub step_fraction: f64,
    pub decay: f64,
    pub decay_every: usize,
}

/// Outputs at `x` if `x` satisfies every constraint of the disjunct.
pub(crate) fn check_point(net: &NetworkGraph, d: &Disjunct, x: &[f64]) -> Option<Vec<f64>> {
    let y = net.evaluate(x).ok()?;
    d.outputs_satisfied(&y).then_some(y)
}

/// Runs one descent from `start`; returns a satisfying `(x, y)` or `None`.
/// `iterations` is incremented once per network evaluation.
pub(crate) fn descend(
    net: &NetworkGraph,
    d: &Disjunct,
    region: &InputBox,
    start: Vec<f64>,
    schedule: &Schedule,
    iterations: &mut u64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n_out = net.d_out();
    let widths = finite_box(region).widths();
    let mut x = region.clamp(&start);
    let mut step = schedule.step_fraction;
    for t in 0..=schedule.steps {
        *iterations += 1;
        let y = net.evaluate(&x).ok()?;
        let slacks: Vec<f64> = d.output_constraints.iter().map(|c| c.slack(&y)).collect();
        let (worst, worst_slack) =
            slacks.iter().copied().enumerate().fold(
                (0, f64::INFINITY),
                |best, (i, s)| if s < best.1 { (i, s) } else { best },
            );
        if worst_slack >= 0.0 {
            return Some((x, y));
        }
        if t == schedule.steps || !worst_slack.is_finite() {
            break;
        }
        if t > 0 && t % schedule.decay_every == 0 {
            step *= schedule.decay;
        }
        // Ascend the slack of the most violated constraint.
        let c = &d.output_constraints[worst];
        let mut w = c.output_weights(n_out);
        if c.relation == Relation::LessEq {
            w.iter_mut().for_each(|v| *v = -*v);
        }
        let grad = net.input_gradient(&x, &Objective::Linear(w)).ok()?;
        for i in 0..x.len() {
            if grad[i] != 0.0 && grad[i].is_finite() {
                x[i] += step * widths[i] * grad[i].signum();
            }
        }
        x = region.clamp(&x);
    }
    None
}

pub(crate) fn random_point(region: &InputBox, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f = finite_box(region);
    f.lower
        .iter()
        .zip(&f.upper)
        .map(|(&l, &u)| if l < u { rng.gen_range(l..=u) } else { l })
        .collect()
}
