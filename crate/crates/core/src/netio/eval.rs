//! Forward evaluation and reverse-mode input gradients.
//!
//! Sums run in index-ascending order and bias terms are added last, so a
//! given graph and input always produce the same bits.

use super::{NetworkGraph, Op, OpNode};
use crate::error::{Error, Result};
use crate::speclang::LinearConstraint;

/// Scalar function of the outputs whose input gradient is requested.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// A single output coordinate.
    Output(usize),
    /// `Σ w_j · y_j` over all outputs.
    Linear(Vec<f64>),
}

impl Objective {
    /// Left-hand side of a constraint, `Σ c_j · y_j` (the relation is ignored).
    pub fn from_constraint(c: &LinearConstraint, num_outputs: usize) -> Self {
        Objective::Linear(c.output_weights(num_outputs))
    }

    fn weights(&self, num_outputs: usize) -> Result<Vec<f64>> {
        match self {
            Objective::Output(j) if *j < num_outputs => {
                let mut w = vec![0.0; num_outputs];
                w[*j] = 1.0;
                Ok(w)
            }
            Objective::Output(j) => Err(Error::DimensionMismatch(format!(
                "objective output {j} with {num_outputs} outputs"
            ))),
            Objective::Linear(w) if w.len() == num_outputs => Ok(w.clone()),
            Objective::Linear(w) => Err(Error::DimensionMismatch(format!(
                "objective has {} weights for {num_outputs} outputs",
                w.len()
            ))),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn pool_windows(
    shape_in: &[usize],
    shape_out: &[usize],
    kernel: [usize; 2],
    strides: [usize; 2],
    pads: [usize; 4],
    mut visit: impl FnMut(usize, &[usize]),
) {
    let (c_n, h, w) = (shape_in[0], shape_in[1], shape_in[2]);
    let (oh_n, ow_n) = (shape_out[1], shape_out[2]);
    let mut window = Vec::with_capacity(kernel[0] * kernel[1]);
    for c in 0..c_n {
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                window.clear();
                for kh in 0..kernel[0] {
                    let ih = (oh * strides[0] + kh) as isize - pads[0] as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    for kw in 0..kernel[1] {
                        let iw = (ow * strides[1] + kw) as isize - pads[1] as isize;
                        if iw < 0 || iw as usize >= w {
                            continue;
                        }
                        window.push((c * h + ih as usize) * w + iw as usize);
                    }
                }
                visit((c * oh_n + oh) * ow_n + ow, &window);
            }
        }
    }
}

/// Index of the maximum, lowest index on ties.
pub(crate) fn argmax_lowest(x: &[f64], window: &[usize]) -> usize {
    let mut best = window[0];
    for &i in &window[1..] {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

/// Calls `f(out_index, in_index, weight_index)` for every multiply of a
/// convolution in accumulation order.
pub(crate) fn conv_taps(
    shape_in: &[usize],
    wshape: &[usize],
    shape_out: &[usize],
    strides: [usize; 2],
    pads: [usize; 4],
    mut f: impl FnMut(usize, usize, usize),
) {
    let (c_n, h, w) = (shape_in[0], shape_in[1], shape_in[2]);
    let (m_n, kh_n, kw_n) = (wshape[0], wshape[2], wshape[3]);
    let (oh_n, ow_n) = (shape_out[1], shape_out[2]);
    for m in 0..m_n {
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let o = (m * oh_n + oh) * ow_n + ow;
                for c in 0..c_n {
                    for kh in 0..kh_n {
                        let ih = (oh * strides[0] + kh) as isize - pads[0] as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        for kw in 0..kw_n {
                            let iw = (ow * strides[1] + kw) as isize - pads[1] as isize;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            let xi = (c * h + ih as usize) * w + iw as usize;
                            let wi = ((m * c_n + c) * kh_n + kh) * kw_n + kw;
                            f(o, xi, wi);
                        }
                    }
                }
            }
        }
    }
}

/// Number of elements per channel for a value of the given shape.
pub(crate) fn channel_stride(shape: &[usize]) -> usize {
    shape[1..].iter().product::<usize>().max(1)
}

fn forward_node(net: &NetworkGraph, node: &OpNode, values: &[Vec<f64>]) -> Vec<f64> {
    let x = &values[node.inputs[0]];
    let in_shape = net.value_shape(node.inputs[0]);
    match &node.op {
        Op::Dense { weight, bias } => {
            let cols = weight.shape()[1];
            let w = weight.data();
            bias.iter()
                .enumerate()
                .map(|(j, b)| {
                    let row = &w[j * cols..(j + 1) * cols];
                    let mut acc = 0.0;
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    acc + b
                })
                .collect()
        }
        Op::Conv2d {
            weight,
            bias,
            strides,
            pads,
        } => {
            let n: usize = node.output_shape.iter().product();
            let mut acc = vec![0.0; n];
            let w = weight.data();
            conv_taps(
                in_shape,
                weight.shape(),
                &node.output_shape,
                *strides,
                *pads,
                |o, xi, wi| {
                    acc[o] += w[wi] * x[xi];
                },
            );
            let per = channel_stride(&node.output_shape);
            for (o, a) in acc.iter_mut().enumerate() {
                *a += bias[o / per];
            }
            acc
        }
        Op::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        Op::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Op::Tanh => x.iter().map(|v| v.tanh()).collect(),
        Op::MaxPool2d { kernel, strides, pads } => {
            let mut out = vec![0.0; node.output_shape.iter().product()];
            pool_windows(in_shape, &node.output_shape, *kernel, *strides, *pads, |o, win| {
                out[o] = x[argmax_lowest(x, win)];
            });
            out
        }
        Op::AvgPool2d {
            kernel,
            strides,
            pads,
            count_include_pad,
        } => {
            let mut out = vec![0.0; node.output_shape.iter().product()];
            let full = (kernel[0] * kernel[1]) as f64;
            pool_windows(in_shape, &node.output_shape, *kernel, *strides, *pads, |o, win| {
                let mut acc = 0.0;
                for &i in win {
                    acc += x[i];
                }
                let count = if *count_include_pad { full } else { win.len() as f64 };
                out[o] = acc / count;
            });
            out
        }
        Op::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            epsilon,
        } => {
            let per = channel_stride(in_shape);
            x.iter()
                .enumerate()
                .map(|(i, v)| {
                    let (scale, m, b) = Op::batchnorm_affine(gamma, beta, mean, var, *epsilon, i / per);
                    scale * (v - m) + b
                })
                .collect()
        }
        Op::Add { constant: Some(c) } => x.iter().zip(c.data()).map(|(a, b)| a + b).collect(),
        Op::Add { constant: None } => {
            let y = &values[node.inputs[1]];
            x.iter().zip(y).map(|(a, b)| a + b).collect()
        }
        Op::Flatten | Op::Reshape { .. } => x.clone(),
    }
}

impl NetworkGraph {
    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.d_in()
            )));
        }
        Ok(())
    }

    /// Every intermediate value: index 0 is the input, index `k + 1` the
    /// output of node `k`.
    pub fn forward_values(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.nodes.len() + 1);
        values.push(x.to_vec());
        for node in &self.nodes {
            let v = forward_node(self, node, &values);
            values.push(v);
        }
        Ok(values)
    }

    /// Computes `N(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut values = self.forward_values(x)?;
        Ok(values.pop().expect("input value always present"))
    }

    /// Gradient of the objective with respect to the input.
    ///
    /// At kinks the subgradient follows the forward tie-break: ReLU at zero
    /// passes nothing and max-pooling routes to the lowest maximal index.
    pub fn input_gradient(&self, x: &[f64], objective: &Objective) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(x, objective)?.1)
    }

    /// Outputs together with the objective's input gradient.
    pub fn value_and_gradient(&self, x: &[f64], objective: &Objective) -> Result<(Vec<f64>, Vec<f64>)> {
        let seed = objective.weights(self.d_out())?;
        let values = self.forward_values(x)?;
        let mut grads: Vec<Vec<f64>> = values.iter().map(|v| vec![0.0; v.len()]).collect();
        let out = self.output_value();
        grads[out] = seed;

        for k in (0..self.nodes.len()).rev() {
            let node = &self.nodes[k];
            let g = std::mem::take(&mut grads[k + 1]);
            let src = node.inputs[0];
            let x = &values[src];
            let in_shape = self.value_shape(src);
            match &node.op {
                Op::Dense { weight, .. } => {
                    let cols = weight.shape()[1];
                    let w = weight.data();
                    let gx = &mut grads[src];
                    for (j, gj) in g.iter().enumerate() {
                        if *gj == 0.0 {
                            continue;
                        }
                        for (i, wi) in w[j * cols..(j + 1) * cols].iter().enumerate() {
                            gx[i] += wi * gj;
                        }
                    }
                }
                Op::Conv2d {
                    weight, strides, pads, ..
                } => {
                    let w = weight.data();
                    let gx = &mut grads[src];
                    conv_taps(
                        in_shape,
                        weight.shape(),
                        &node.output_shape,
                        *strides,
                        *pads,
                        |o, xi, wi| {
                            gx[xi] += w[wi] * g[o];
                        },
                    );
                }
                Op::Relu => {
                    for (i, gi) in g.iter().enumerate() {
                        if x[i] > 0.0 {
                            grads[src][i] += gi;
                        }
                    }
                }
                Op::Sigmoid => {
                    let y = &values[k + 1];
                    for (i, gi) in g.iter().enumerate() {
                        grads[src][i] += gi * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh => {
                    let y = &values[k + 1];
                    for (i, gi) in g.iter().enumerate() {
                        grads[src][i] += gi * (1.0 - y[i] * y[i]);
                    }
                }
                Op::MaxPool2d { kernel, strides, pads } => {
                    let gx = &mut grads[src];
                    pool_windows(in_shape, &node.output_shape, *kernel, *strides, *pads, |o, win| {
                        gx[argmax_lowest(x, win)] += g[o];
                    });
                }
                Op::AvgPool2d {
                    kernel,
                    strides,
                    pads,
                    count_include_pad,
                } => {
                    let gx = &mut grads[src];
                    let full = (kernel[0] * kernel[1]) as f64;
                    pool_windows(in_shape, &node.output_shape, *kernel, *strides, *pads, |o, win| {
                        let count = if *count_include_pad { full } else { win.len() as f64 };
                        for &i in win {
                            gx[i] += g[o] / count;
                        }
                    });
                }
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    epsilon,
                } => {
                    let per = channel_stride(in_shape);
                    for (i, gi) in g.iter().enumerate() {
                        let (scale, _, _) = Op::batchnorm_affine(gamma, beta, mean, var, *epsilon, i / per);
                        grads[src][i] += scale * gi;
                    }
                }
                Op::Add { constant } => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[src][i] += gi;
                    }
                    if constant.is_none() {
                        let other = node.inputs[1];
                        for (i, gi) in g.iter().enumerate() {
                            grads[other][i] += gi;
                        }
                    }
                }
                Op::Flatten | Op::Reshape { .. } => {
                    for (i, gi) in g.iter().enumerate() {
                        grads[src][i] += gi;
                    }
                }
            }
        }
        let y = values[out].clone();
        Ok((y, std::mem::take(&mut grads[0])))
    }
}
