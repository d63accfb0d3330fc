//! Random two-input ReLU robustness instances with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnn_arena::netio::NetworkGraph;
use vnn_arena::speclang::{make_robustness_query, AdversarialQuery, RobustnessParams};

use super::{max_affine_objective, random_mlp, Act, Mlp};

pub struct Instance {
    pub mlp: Mlp,
    pub net: NetworkGraph,
    pub query: AdversarialQuery,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub target: usize,
    /// Ground truth: some competitor can reach the target score in the box.
    pub sat: bool,
    /// Exact maximum of `y_j - y_target` over the box, per competitor.
    pub max_margins: Vec<f64>,
}

/// Exact maximum of `y_j - y_t` over the box by linear-region enumeration.
pub fn exact_margins(mlp: &Mlp, lower: [f64; 2], upper: [f64; 2], target: usize) -> Vec<f64> {
    (0..mlp.d_out())
        .filter(|&j| j != target)
        .map(|j| {
            let mut c = vec![0.0; mlp.d_out()];
            c[j] = 1.0;
            c[target] = -1.0;
            max_affine_objective(mlp, lower, upper, &c, 0.0).0
        })
        .collect()
}

/// Maximum of `y_j - y_t` over an `n x n` grid of the box.
pub fn grid_margins(mlp: &Mlp, lower: [f64; 2], upper: [f64; 2], target: usize, n: usize) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; mlp.d_out()];
    for a in 0..n {
        for b in 0..n {
            let t = |k: usize, i: usize| lower[i] + (upper[i] - lower[i]) * k as f64 / (n - 1) as f64;
            let y = mlp.forward(&[t(a, 0), t(b, 1)]);
            for j in 0..y.len() {
                best[j] = best[j].max(y[j] - y[target]);
            }
        }
    }
    (0..mlp.d_out()).filter(|&j| j != target).map(|j| best[j]).collect()
}

/// `count` instances: 1-2 hidden ReLU layers of width 2-8 and 2-3 outputs,
/// weights uniform in `[-2, 2]`, an ε-ball of log-uniform radius 0.05-2 around a random
/// centre, target = the centre's predicted class. Instances whose exact
/// margin lies within 1e-6 of zero are redrawn, as their truth would hinge
/// on rounding. Every instance's exact margins are checked against a
/// 201 x 201 grid, which can only under-approximate them.
pub fn robustness_suite(seed: u64, count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let hidden: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(2..=8)).collect();
        let d_out = rng.gen_range(2..=3);
        let mlp = random_mlp(&mut rng, 2, d_out, &hidden, &[Act::Relu], 2.0);
        let center = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let eps: f64 = 0.05 * 40f64.powf(rng.gen_range(0.0..1.0));
        let y = mlp.forward(&center);
        let target = (0..d_out).fold(0, |best, j| if y[j] > y[best] { j } else { best });
        let query = make_robustness_query(&RobustnessParams::new(center.to_vec(), eps, target), 2, d_out).unwrap();
        let b = &query.disjuncts()[0].input_box;
        let (lower, upper) = ([b.lower[0], b.lower[1]], [b.upper[0], b.upper[1]]);
        let max_margins = exact_margins(&mlp, lower, upper, target);
        if max_margins.iter().any(|m| m.abs() < 1e-6) {
            continue;
        }
        let grid = grid_margins(&mlp, lower, upper, target, 201);
        for (g, e) in grid.iter().zip(&max_margins) {
            assert!(*g <= e + 1e-9, "grid margin {g} exceeds exact {e}");
        }
        let sat = max_margins.iter().any(|&m| m > 0.0);
        out.push(Instance {
            net: mlp.to_graph(),
            mlp,
            query,
            lower,
            upper,
            target,
            sat,
            max_margins,
        });
    }
    out
}
