//! Feed-forward networks as small operator DAGs.
//!
//! Shapes exclude the batch dimension: an ONNX input of shape `[1, 3, 8, 8]`
//! becomes `[3, 8, 8]` here. Value `0` is the network input and value `k + 1`
//! is the output of node `k`; nodes are stored in topological order.

pub(crate) mod eval;
pub mod onnx;
mod proto;
pub mod text;

use std::path::Path;

use crate::error::{Error, Result};

pub use eval::Objective;
pub use onnx::{load_onnx, save_onnx};
pub use text::{load_network_text, print_network_text};

pub type ValueId = usize;

/// Loads a network from disk: `.onnx` files as ONNX, anything else as the
/// plain-text format.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("onnx")) {
        load_onnx(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Decode(format!("{} is neither ONNX nor UTF-8 text", path.display())))?;
        load_network_text(&text)
    }
}

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `y = W x + b` with `W` of shape `[out, in]`.
    Dense {
        weight: Tensor,
        bias: Vec<f64>,
    },
    /// 2-D convolution over `[C, H, W]`; weight `[M, C, kh, kw]`,
    /// pads `[top, left, bottom, right]`.
    Conv2d {
        weight: Tensor,
        bias: Vec<f64>,
        strides: [usize; 2],
        pads: [usize; 4],
    },
    Relu,
    Sigmoid,
    Tanh,
    MaxPool2d {
        kernel: [usize; 2],
        strides: [usize; 2],
        pads: [usize; 4],
    },
    AvgPool2d {
        kernel: [usize; 2],
        strides: [usize; 2],
        pads: [usize; 4],
        count_include_pad: bool,
    },
    /// Inference-mode batch normalization over the leading (channel) axis.
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        epsilon: f64,
    },
    /// Sum of two values, or of one value and a constant expanded to the
    /// output shape.
    Add {
        constant: Option<Tensor>,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Dense { .. } => "Dense",
            Op::Conv2d { .. } => "Conv2d",
            Op::Relu => "Relu",
            Op::Sigmoid => "Sigmoid",
            Op::Tanh => "Tanh",
            Op::MaxPool2d { .. } => "MaxPool2d",
            Op::AvgPool2d { .. } => "AvgPool2d",
            Op::BatchNorm { .. } => "BatchNorm",
            Op::Add { .. } => "Add",
            Op::Flatten => "Flatten",
            Op::Reshape { .. } => "Reshape",
        }
    }

    /// Per-channel affine coefficients `(scale, shift)` of a batch norm.
    pub(crate) fn batchnorm_affine(
        gamma: &[f64],
        beta: &[f64],
        mean: &[f64],
        var: &[f64],
        epsilon: f64,
        c: usize,
    ) -> (f64, f64, f64) {
        let scale = gamma[c] / (var[c] + epsilon).sqrt();
        (scale, mean[c], beta[c])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub op: Op,
    pub inputs: Vec<ValueId>,
    pub output_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<OpNode>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl NetworkGraph {
    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn d_in(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn d_out(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn output_value(&self) -> ValueId {
        self.nodes.len()
    }

    pub(crate) fn value_shape(&self, v: ValueId) -> &[usize] {
        if v == 0 {
            &self.input_shape
        } else {
            &self.nodes[v - 1].output_shape
        }
    }

    /// True when every activation is piecewise linear (ReLU, pooling).
    pub fn is_piecewise_linear(&self) -> bool {
        !self.nodes.iter().any(|n| matches!(n.op, Op::Sigmoid | Op::Tanh))
    }

    pub fn summary(&self) -> String {
        let ops: Vec<&str> = self.nodes.iter().map(|n| n.op.name()).collect();
        format!(
            "input {:?} (d_in={}), output {:?} (d_out={}), {} nodes: {}",
            self.input_shape,
            self.d_in(),
            self.output_shape,
            self.d_out(),
            self.nodes.len(),
            ops.join(" -> ")
        )
    }
}

/// Incremental, shape-checked graph construction.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    input_shape: Vec<usize>,
    nodes: Vec<OpNode>,
}

fn conv_out(size: usize, pad_a: usize, pad_b: usize, kernel: usize, stride: usize) -> Result<usize> {
    let padded = size + pad_a + pad_b;
    if kernel == 0 || stride == 0 || padded < kernel {
        return Err(Error::Shape(format!(
            "window {kernel} (stride {stride}) does not fit extent {size} with pads {pad_a}/{pad_b}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn broadcast_to(constant: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let cs = constant.shape();
    if cs == shape {
        return Ok(constant.clone());
    }
    let err = || Error::Shape(format!("constant of shape {cs:?} does not broadcast to {shape:?}"));
    // Drop leading unit axes (a batch axis, typically) until ranks fit.
    let mut cs: &[usize] = cs;
    while cs.len() > shape.len() {
        if cs[0] != 1 {
            return Err(err());
        }
        cs = &cs[1..];
    }
    let offset = shape.len() - cs.len();
    let mut padded = vec![1; offset];
    padded.extend_from_slice(cs);
    if padded.iter().zip(shape).any(|(c, s)| *c != 1 && c != s) {
        return Err(err());
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            let ci = if padded[axis] == 1 { 0 } else { i };
            flat = flat * padded[axis] + ci;
        }
        data.push(constant.data()[flat]);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    Tensor::new(shape.to_vec(), data)
}

impl GraphBuilder {
    pub fn new(input_shape: Vec<usize>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        Ok(GraphBuilder {
            input_shape,
            nodes: Vec::new(),
        })
    }

    pub fn last(&self) -> ValueId {
        self.nodes.len()
    }

    pub fn shape_of(&self, v: ValueId) -> Result<&[usize]> {
        if v == 0 {
            Ok(&self.input_shape)
        } else {
            self.nodes
                .get(v - 1)
                .map(|n| n.output_shape.as_slice())
                .ok_or_else(|| Error::Shape(format!("value {v} is not defined yet")))
        }
    }

    /// Appends `op` applied to the most recent value.
    pub fn chain(&mut self, op: Op) -> Result<ValueId> {
        let last = self.last();
        self.push(op, vec![last])
    }

    pub fn push(&mut self, op: Op, inputs: Vec<ValueId>) -> Result<ValueId> {
        let arity = match &op {
            Op::Add { constant: None } => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Shape(format!(
                "{} takes {arity} input(s), got {}",
                op.name(),
                inputs.len()
            )));
        }
        let in_shape = self.shape_of(inputs[0])?.to_vec();
        let mut op = op;
        let output_shape = match &mut op {
            Op::Dense { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 2 {
                    return Err(Error::Shape(format!("dense weight has shape {ws:?}")));
                }
                if in_shape.len() != 1 || in_shape[0] != ws[1] {
                    return Err(Error::Shape(format!(
                        "dense layer expects [{}] input, got {in_shape:?}",
                        ws[1]
                    )));
                }
                if bias.len() != ws[0] {
                    return Err(Error::Shape(format!(
                        "dense bias has {} entries for {} rows",
                        bias.len(),
                        ws[0]
                    )));
                }
                vec![ws[0]]
            }
            Op::Conv2d {
                weight,
                bias,
                strides,
                pads,
            } => {
                let ws = weight.shape();
                if ws.len() != 4 || in_shape.len() != 3 || in_shape[0] != ws[1] {
                    return Err(Error::Shape(format!(
                        "conv weight {ws:?} does not match input {in_shape:?}"
                    )));
                }
                if bias.len() != ws[0] {
                    return Err(Error::Shape(format!(
                        "conv bias has {} entries for {} channels",
                        bias.len(),
                        ws[0]
                    )));
                }
                vec![
                    ws[0],
                    conv_out(in_shape[1], pads[0], pads[2], ws[2], strides[0])?,
                    conv_out(in_shape[2], pads[1], pads[3], ws[3], strides[1])?,
                ]
            }
            Op::MaxPool2d { kernel, strides, pads }
            | Op::AvgPool2d {
                kernel, strides, pads, ..
            } => {
                if in_shape.len() != 3 {
                    return Err(Error::Shape(format!(
                        "pooling expects [C, H, W] input, got {in_shape:?}"
                    )));
                }
                if pads[0] >= kernel[0] || pads[2] >= kernel[0] || pads[1] >= kernel[1] || pads[3] >= kernel[1] {
                    return Err(Error::Shape("pooling pad must be smaller than the kernel".into()));
                }
                vec![
                    in_shape[0],
                    conv_out(in_shape[1], pads[0], pads[2], kernel[0], strides[0])?,
                    conv_out(in_shape[2], pads[1], pads[3], kernel[1], strides[1])?,
                ]
            }
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                epsilon,
            } => {
                let c = in_shape[0];
                if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&n| n != c) {
                    return Err(Error::Shape(format!("batch norm parameters do not match {c} channels")));
                }
                if var.iter().any(|v| *v + *epsilon <= 0.0) || *epsilon < 0.0 {
                    return Err(Error::Shape("batch norm variance + epsilon must be positive".into()));
                }
                in_shape.clone()
            }
            Op::Add { constant: Some(c) } => {
                *c = broadcast_to(c, &in_shape)?;
                in_shape.clone()
            }
            Op::Add { constant: None } => {
                let other = self.shape_of(inputs[1])?;
                if other != in_shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "add of mismatched shapes {in_shape:?} and {other:?}"
                    )));
                }
                in_shape.clone()
            }
            Op::Relu | Op::Sigmoid | Op::Tanh => in_shape.clone(),
            Op::Flatten => vec![in_shape.iter().product()],
            Op::Reshape { shape } => {
                let n: usize = shape.iter().product();
                if shape.contains(&0) || n != in_shape.iter().product::<usize>() {
                    return Err(Error::Shape(format!("cannot reshape {in_shape:?} to {shape:?}")));
                }
                shape.clone()
            }
        };
        self.nodes.push(OpNode {
            op,
            inputs,
            output_shape,
        });
        Ok(self.nodes.len())
    }

    /// Replaces the bias of the dense node producing `v`; false if `v` is
    /// not a dense node or the length differs.
    pub(crate) fn set_dense_bias(&mut self, v: ValueId, new_bias: Vec<f64>) -> bool {
        match self.nodes.get_mut(v.wrapping_sub(1)) {
            Some(OpNode {
                op: Op::Dense { bias, .. },
                ..
            }) if bias.len() == new_bias.len() => {
                *bias = new_bias;
                true
            }
            _ => false,
        }
    }

    /// Finishes with `output` as the network output, dropping nodes that do
    /// not contribute to it.
    pub fn finish_at(self, output: ValueId) -> Result<NetworkGraph> {
        if output > self.nodes.len() {
            return Err(Error::Shape(format!("output value {output} is not defined")));
        }
        let mut live = vec![false; self.nodes.len() + 1];
        live[output] = true;
        for v in (1..=output).rev() {
            if live[v] {
                for &i in &self.nodes[v - 1].inputs {
                    live[i] = true;
                }
            }
        }
        let mut remap = vec![0usize; self.nodes.len() + 1];
        let mut nodes = Vec::new();
        for (k, mut node) in self.nodes.into_iter().enumerate().take(output) {
            if !live[k + 1] {
                continue;
            }
            node.inputs = node.inputs.iter().map(|&i| remap[i]).collect();
            nodes.push(node);
            remap[k + 1] = nodes.len();
        }
        let output_shape = match nodes.last() {
            Some(n) => n.output_shape.clone(),
            None => self.input_shape.clone(),
        };
        Ok(NetworkGraph {
            nodes,
            input_shape: self.input_shape,
            output_shape,
        })
    }

    pub fn finish(self) -> Result<NetworkGraph> {
        let last = self.last();
        self.finish_at(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn dense(rows: usize, cols: usize, w: &[f64], b: &[f64]) -> Op {
        Op::Dense {
            weight: Tensor::new(vec![rows, cols], w.to_vec()).unwrap(),
            bias: b.to_vec(),
        }
    }

    #[test]
    fn dense_shape_checks() {
        let mut g = GraphBuilder::new(vec![2]).unwrap();
        assert!(g.chain(dense(3, 2, &[0.0; 6], &[0.0; 3])).is_ok());
        assert!(matches!(
            g.chain(dense(2, 2, &[0.0; 4], &[0.0; 2])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            g.chain(dense(2, 3, &[0.0; 6], &[0.0; 3])),
            Err(Error::Shape(_))
        ));
        let net = g.finish().unwrap();
        assert_eq!((net.d_in(), net.d_out()), (2, 3));
    }

    #[test]
    fn conv_and_pool_output_shapes() {
        let mut g = GraphBuilder::new(vec![1, 5, 5]).unwrap();
        g.chain(Op::Conv2d {
            weight: Tensor::new(vec![2, 1, 3, 3], vec![0.0; 18]).unwrap(),
            bias: vec![0.0; 2],
            strides: [2, 2],
            pads: [1, 1, 1, 1],
        })
        .unwrap();
        assert_eq!(g.shape_of(1).unwrap(), &[2, 3, 3]);
        g.chain(Op::MaxPool2d {
            kernel: [2, 2],
            strides: [1, 1],
            pads: [0; 4],
        })
        .unwrap();
        assert_eq!(g.shape_of(2).unwrap(), &[2, 2, 2]);
        g.chain(Op::Flatten).unwrap();
        assert_eq!(g.finish().unwrap().output_shape(), &[8]);
    }

    #[test]
    fn constants_broadcast_over_channels() {
        let c = Tensor::new(vec![1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let t = broadcast_to(&c, &[2, 1, 2]).unwrap();
        assert_eq!(t.data(), &[1.0, 1.0, 2.0, 2.0]);
        let bad = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        assert!(broadcast_to(&bad, &[2, 2]).is_err());
    }

    #[test]
    fn dead_nodes_are_pruned() {
        let mut g = GraphBuilder::new(vec![2]).unwrap();
        let a = g.chain(Op::Relu).unwrap();
        let _dead = g.push(Op::Sigmoid, vec![0]).unwrap();
        let out = g.push(Op::Tanh, vec![a]).unwrap();
        let net = g.finish_at(out).unwrap();
        assert_eq!(net.nodes().len(), 2);
        assert_eq!(net.nodes()[1].inputs, vec![1]);
    }

    #[test]
    fn tensor_checks_element_count() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }
}
