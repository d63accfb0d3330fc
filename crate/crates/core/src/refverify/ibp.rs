//! Interval bound propagation.
//!
//! Bounds are computed in the same operation order as forward evaluation.
//! Floating-point rounding is monotone, so this alone encloses every value
//! the evaluator can produce; affine layers are additionally widened by a
//! standard summation error bound so the intervals also enclose the
//! exact-arithmetic network.

use crate::error::{Error, Result};
use crate::netio::eval::{conv_taps, pool_windows};
use crate::netio::{NetworkGraph, Op};
use crate::speclang::{InputBox, LinearConstraint, Relation};

const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

/// `γ_n = n·u / (1 − n·u)`, the classical bound on relative error of an
/// `n`-term floating-point sum.
fn gamma(n: usize) -> f64 {
    let nu = n as f64 * UNIT_ROUNDOFF;
    nu / (1.0 - nu)
}

/// Outward slack for an affine form with `n` roundings and magnitude `scale`.
fn affine_error(n: usize, scale: f64) -> f64 {
    2.0 * gamma(n + 1) * scale + n as f64 * f64::MIN_POSITIVE
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalVector {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl IntervalVector {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} lower and {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        // Negated so that NaN bounds are rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let bad = (0..lower.len()).find(|&i| !(lower[i] <= upper[i]));
        if let Some(i) = bad {
            return Err(Error::InvalidQuery(format!(
                "interval {i} is empty: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(IntervalVector { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.len() == self.len()
            && y.iter()
                .enumerate()
                .all(|(i, &v)| self.lower[i] <= v && v <= self.upper[i])
    }

    /// True when every interval lies inside the matching one of `outer`.
    pub fn is_within(&self, outer: &IntervalVector) -> bool {
        self.len() == outer.len()
            && (0..self.len()).all(|i| outer.lower[i] <= self.lower[i] && self.upper[i] <= outer.upper[i])
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }
}

fn sane(lo: f64, hi: f64) -> (f64, f64) {
    (
        if lo.is_nan() { f64::NEG_INFINITY } else { lo },
        if hi.is_nan() { f64::INFINITY } else { hi },
    )
}

fn widen(lo: f64, hi: f64, err: f64) -> (f64, f64) {
    let (lo, hi) = sane(lo, hi);
    if err.is_finite() {
        ((lo - err).next_down(), (hi + err).next_up())
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Product bounds of a scalar weight with an interval, `0 · ∞` taken as 0.
fn scaled(w: f64, lo: f64, hi: f64) -> (f64, f64, f64) {
    if w == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let (a, b) = if w > 0.0 { (w * lo, w * hi) } else { (w * hi, w * lo) };
    (a, b, w.abs() * lo.abs().max(hi.abs()))
}

/// Relative-plus-absolute slack for transcendental activations.
fn smooth(lo: f64, hi: f64) -> (f64, f64) {
    let pad = |v: f64| 8.0 * f64::EPSILON * v.abs() + 1e-300;
    (lo - pad(lo), hi + pad(hi))
}

fn window_max(x: &[f64], window: &[usize]) -> f64 {
    window.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Output bounds of `net` over `input`.
pub fn ibp_bounds(net: &NetworkGraph, input: &InputBox) -> Result<IntervalVector> {
    if input.dim() != net.d_in() {
        return Err(Error::DimensionMismatch(format!(
            "box has {} dimensions, network expects {}",
            input.dim(),
            net.d_in()
        )));
    }
    let mut values: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(net.nodes().len() + 1);
    values.push((input.lower.clone(), input.upper.clone()));
    for node in net.nodes() {
        let (lo, hi) = &values[node.inputs[0]];
        let in_shape = net.value_shape(node.inputs[0]);
        let n_out: usize = node.output_shape.iter().product();
        let out = match &node.op {
            Op::Dense { weight, bias } => {
                let cols = weight.shape()[1];
                let w = weight.data();
                let mut out = (Vec::with_capacity(n_out), Vec::with_capacity(n_out));
                for (j, b) in bias.iter().enumerate() {
                    let (mut a_lo, mut a_hi, mut mag) = (0.0, 0.0, 0.0);
                    for (i, &wi) in w[j * cols..(j + 1) * cols].iter().enumerate() {
                        let (l, u, m) = scaled(wi, lo[i], hi[i]);
                        a_lo += l;
                        a_hi += u;
                        mag += m;
                    }
                    let (l, u) = widen(a_lo + b, a_hi + b, affine_error(cols + 1, mag + b.abs()));
                    out.0.push(l);
                    out.1.push(u);
                }
                out
            }
            Op::Conv2d {
                weight,
                bias,
                strides,
                pads,
            } => {
                let (mut a_lo, mut a_hi, mut mag) = (vec![0.0; n_out], vec![0.0; n_out], vec![0.0; n_out]);
                let mut taps = vec![0usize; n_out];
                let w = weight.data();
                conv_taps(
                    in_shape,
                    weight.shape(),
                    &node.output_shape,
                    *strides,
                    *pads,
                    |o, xi, wi| {
                        let (l, u, m) = scaled(w[wi], lo[xi], hi[xi]);
                        a_lo[o] += l;
                        a_hi[o] += u;
                        mag[o] += m;
                        taps[o] += 1;
                    },
                );
                let per = node.output_shape[1..].iter().product::<usize>().max(1);
                let mut out = (Vec::with_capacity(n_out), Vec::with_capacity(n_out));
                for o in 0..n_out {
                    let b = bias[o / per];
                    let (l, u) = widen(a_lo[o] + b, a_hi[o] + b, affine_error(taps[o] + 1, mag[o] + b.abs()));
                    out.0.push(l);
                    out.1.push(u);
                }
                out
            }
            Op::Relu => (
                lo.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                hi.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            ),
            Op::Sigmoid | Op::Tanh => {
                let f = if matches!(node.op, Op::Sigmoid) {
                    sigmoid
                } else {
                    f64::tanh
                };
                lo.iter().zip(hi).map(|(&l, &u)| smooth(f(l), f(u))).unzip()
            }
            Op::MaxPool2d { kernel, strides, pads } => {
                let mut out = (vec![0.0; n_out], vec![0.0; n_out]);
                pool_windows(in_shape, &node.output_shape, *kernel, *strides, *pads, |o, win| {
                    out.0[o] = window_max(lo, win);
                    out.1[o] = window_max(hi, win);
                });
                out
            }
            Op::AvgPool2d {
                kernel,
                strides,
                pads,
                count_include_pad,
            } => {
                let mut out = (vec![0.0; n_out], vec![0.0; n_out]);
                let full = (kernel[0] * kernel[1]) as f64;
                pool_windows(in_shape, &node.output_shape, *kernel, *strides, *pads, |o, win| {
                    let (mut sl, mut su, mut mag) = (0.0, 0.0, 0.0);
                    for &i in win {
                        sl += lo[i];
                        su += hi[i];
                        mag += lo[i].abs().max(hi[i].abs());
                    }
                    let count = if *count_include_pad { full } else { win.len() as f64 };
                    let (l, u) = widen(sl / count, su / count, affine_error(win.len() + 1, mag / count));
                    out.0[o] = l;
                    out.1[o] = u;
                });
                out
            }
            Op::BatchNorm {
                gamma: g,
                beta,
                mean,
                var,
                epsilon,
            } => {
                let per = in_shape[1..].iter().product::<usize>().max(1);
                (0..lo.len())
                    .map(|i| {
                        let (scale, m, b) = Op::batchnorm_affine(g, beta, mean, var, *epsilon, i / per);
                        let (l, u) = (lo[i] - m, hi[i] - m);
                        let (l, u, mag) = scaled(scale, l, u);
                        let mag = mag + scale.abs() * m.abs() + b.abs();
                        widen(l + b, u + b, affine_error(3, mag))
                    })
                    .unzip()
            }
            Op::Add { constant } => {
                let (olo, ohi) = match constant {
                    Some(c) => (c.data().to_vec(), c.data().to_vec()),
                    None => values[node.inputs[1]].clone(),
                };
                (0..lo.len())
                    .map(|i| {
                        let (l, u) = (lo[i] + olo[i], hi[i] + ohi[i]);
                        let mag = lo[i].abs().max(hi[i].abs()) + olo[i].abs().max(ohi[i].abs());
                        widen(l, u, affine_error(1, mag))
                    })
                    .unzip()
            }
            Op::Flatten | Op::Reshape { .. } => (lo.clone(), hi.clone()),
        };
        values.push(out);
    }
    let (lower, upper) = values.pop().expect("input value always present");
    Ok(IntervalVector { lower, upper })
}

/// Whether the bounds prove that some constraint cannot hold. `true` is a
/// proof (in both floating-point and exact arithmetic); `false` proves
/// nothing.
pub fn decide_disjunct_unsat(bounds: &IntervalVector, constraints: &[LinearConstraint]) -> bool {
    constraints.iter().any(|c| constraint_refuted(bounds, c))
}

fn constraint_refuted(bounds: &IntervalVector, c: &LinearConstraint) -> bool {
    let (mut lo, mut hi, mut mag) = (0.0, 0.0, c.bound.abs());
    for &(coef, var) in &c.terms {
        let Some((&l, &u)) = bounds.lower.get(var.index).zip(bounds.upper.get(var.index)) else {
            return false;
        };
        let (a, b, m) = scaled(coef, l, u);
        lo += a;
        hi += b;
        mag += m;
    }
    let err = affine_error(c.terms.len() + 1, mag);
    let (lo, hi) = sane(lo, hi);
    match c.relation {
        Relation::GreaterEq => hi + err < c.bound,
        Relation::LessEq => lo - err > c.bound,
    }
}
