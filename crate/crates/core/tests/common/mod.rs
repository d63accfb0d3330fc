//! Helpers shared by the integration tests: a plain-Rust MLP used as an
//! independent evaluation oracle, random network generators and an exact
//! region-enumeration oracle for two-input ReLU networks.
#![allow(dead_code)]

pub mod desk;
pub mod scoring;
pub mod suite;
pub mod tools;
pub mod vnnlib;

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vnn_arena::netio::{GraphBuilder, NetworkGraph, Op, Tensor};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Act {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Act::Relu => v.max(0.0),
            Act::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Act::Tanh => v.tanh(),
            Act::Identity => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// `weight[i][j]`: output `i`, input `j`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub act: Act,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub d_in: usize,
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn d_out(&self) -> usize {
        self.layers.last().map(|l| l.bias.len()).unwrap_or(self.d_in)
    }

    /// Pre-activations of every layer followed by the final output.
    pub fn preacts(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut h = x.to_vec();
        let mut pre = Vec::new();
        for l in &self.layers {
            let z: Vec<f64> = l
                .weight
                .iter()
                .zip(&l.bias)
                .map(|(row, b)| row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            h = z.iter().map(|&v| l.act.apply(v)).collect();
            pre.push(z);
        }
        (pre, h)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.preacts(x).1
    }

    pub fn to_graph(&self) -> NetworkGraph {
        let mut g = GraphBuilder::new(vec![self.d_in]).unwrap();
        for l in &self.layers {
            let rows = l.weight.len();
            let cols = l.weight[0].len();
            let data = l.weight.iter().flatten().copied().collect();
            g.chain(Op::Dense {
                weight: Tensor::new(vec![rows, cols], data).unwrap(),
                bias: l.bias.clone(),
            })
            .unwrap();
            match l.act {
                Act::Relu => g.chain(Op::Relu).map(|_| ()).unwrap(),
                Act::Sigmoid => g.chain(Op::Sigmoid).map(|_| ()).unwrap(),
                Act::Tanh => g.chain(Op::Tanh).map(|_| ()).unwrap(),
                Act::Identity => {}
            }
        }
        g.finish().unwrap()
    }
}

/// Random MLP with weights and biases uniform in `[-scale, scale]`. Hidden
/// layers draw their activation from `acts`; the last layer is affine.
pub fn random_mlp(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, hidden: &[usize], acts: &[Act], scale: f64) -> Mlp {
    let mut layers = Vec::new();
    let mut prev = d_in;
    let widths: Vec<usize> = hidden.iter().copied().chain([d_out]).collect();
    for (k, &w) in widths.iter().enumerate() {
        let act = if k + 1 == widths.len() {
            Act::Identity
        } else {
            acts[rng.gen_range(0..acts.len())]
        };
        layers.push(Layer {
            weight: (0..w)
                .map(|_| (0..prev).map(|_| rng.gen_range(-scale..=scale)).collect())
                .collect(),
            bias: (0..w).map(|_| rng.gen_range(-scale..=scale)).collect(),
            act,
        });
        prev = w;
    }
    Mlp { d_in, layers }
}

type Polygon = Vec<[f64; 2]>;

/// Splits a convex polygon by the sign of a function that is affine on it,
/// given its values at the vertices.
fn split(poly: &Polygon, vals: &[f64]) -> (Polygon, Polygon) {
    let (mut neg, mut pos) = (Vec::new(), Vec::new());
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (va, vb) = (vals[i], vals[(i + 1) % n]);
        if va <= 0.0 {
            neg.push(a);
        }
        if va >= 0.0 {
            pos.push(a);
        }
        if (va < 0.0 && vb > 0.0) || (va > 0.0 && vb < 0.0) {
            let t = va / (va - vb);
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            neg.push(p);
            pos.push(p);
        }
    }
    (neg, pos)
}

/// Convex pieces of the box on which every ReLU of a two-input network has
/// a fixed phase, so the network is affine on each piece.
pub fn linear_regions(net: &Mlp, lower: [f64; 2], upper: [f64; 2]) -> Vec<Polygon> {
    assert_eq!(net.d_in, 2);
    let mut pieces = vec![vec![
        [lower[0], lower[1]],
        [upper[0], lower[1]],
        [upper[0], upper[1]],
        [lower[0], upper[1]],
    ]];
    for (k, layer) in net.layers.iter().enumerate() {
        if layer.act != Act::Relu {
            continue;
        }
        for i in 0..layer.bias.len() {
            let mut next = Vec::new();
            for poly in &pieces {
                let vals: Vec<f64> = poly.iter().map(|p| net.preacts(p).0[k][i]).collect();
                let (a, b) = split(poly, &vals);
                for part in [a, b] {
                    if part.len() >= 3 {
                        next.push(part);
                    }
                }
            }
            pieces = next;
        }
    }
    pieces
}

/// Exact maximum over the box of `Σ c_j y_j - d`: the objective is affine on
/// every linear region, so the maximum is attained at a region vertex.
pub fn max_affine_objective(net: &Mlp, lower: [f64; 2], upper: [f64; 2], c: &[f64], d: f64) -> (f64, [f64; 2]) {
    let mut best = (f64::NEG_INFINITY, lower);
    for poly in linear_regions(net, lower, upper) {
        for p in poly {
            let y = net.forward(&p);
            let v = c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - d;
            if v > best.0 {
                best = (v, p);
            }
        }
    }
    best
}

/// Reads `x... | y...` probe lines.
pub fn read_probes(path: &std::path::Path) -> Vec<(Vec<f64>, Vec<f64>)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (x, y) = l.split_once('|').unwrap();
            let nums = |s: &str| s.split_whitespace().map(|t| t.parse().unwrap()).collect();
            (nums(x), nums(y))
        })
        .collect()
}

/// Fixture networks with onnxruntime reference outputs.
pub const ONNX_FIXTURES: [&str; 5] = ["mlp_2_2_2", "mlp_mixed", "residual", "cnn_small", "reshape_dense"];

pub fn load_fixture_net(name: &str) -> NetworkGraph {
    vnn_arena::netio::load_network(fixture(&format!("onnx/{name}.onnx"))).unwrap()
}

/// Compares analytic input gradients of every output against central
/// differences with step `h` at `points` random inputs in `[-2, 2]`.
/// Points within `h` of a kink (where the two one-sided differences
/// disagree) are redrawn. Returns the worst relative error, measured as
/// `|g - fd| / max(|g|, |fd|, 1e-3)`.
pub fn gradient_check(net: &NetworkGraph, rng: &mut ChaCha8Rng, points: usize, h: f64) -> f64 {
    use vnn_arena::netio::Objective;
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < points {
        attempts += 1;
        assert!(attempts < points * 50, "could not find smooth points");
        let x: Vec<f64> = (0..net.d_in()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y0 = net.evaluate(&x).unwrap();
        let mut rows = Vec::new();
        let mut smooth = true;
        'outer: for (j, &y0j) in y0.iter().enumerate() {
            let g = net.input_gradient(&x, &Objective::Output(j)).unwrap();
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let yp = net.evaluate(&xp).unwrap()[j];
                let ym = net.evaluate(&xm).unwrap()[j];
                let fwd = (yp - y0j) / h;
                let bwd = (y0j - ym) / h;
                if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1.0) {
                    smooth = false;
                    break 'outer;
                }
                rows.push((g[i], (yp - ym) / (2.0 * h)));
            }
        }
        if !smooth {
            continue;
        }
        accepted += 1;
        for (g, fd) in rows {
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-3));
        }
    }
    worst
}
