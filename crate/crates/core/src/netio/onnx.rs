//! ONNX model loading for a fixed operator subset, decoded straight from the
//! protobuf wire format.
//!
//! Supported operators: Gemm, MatMul, Add, Conv, Relu, Sigmoid, Tanh,
//! MaxPool, AveragePool, BatchNormalization, Flatten and Reshape, plus
//! Constant nodes as a source of weights. Weights may be stored as float or
//! double (raw or typed fields); float weights are widened to 64 bits.
//!
//! Attribute defaults follow the operator documentation: strides 1, pads 0,
//! Gemm alpha/beta 1, BatchNormalization epsilon 1e-5, AveragePool
//! count_include_pad 0, Flatten axis 1. Dilations other than 1, grouped
//! convolution, `auto_pad` other than NOTSET/VALID and `ceil_mode` are
//! rejected.

use std::collections::HashMap;

use super::proto::{packed_f32, packed_f64, packed_varints, Fields, Value, Writer};
use super::{GraphBuilder, NetworkGraph, Op, Tensor, ValueId};
use crate::error::{Error, Result};

const DT_FLOAT: i64 = 1;
const DT_INT32: i64 = 6;
const DT_INT64: i64 = 7;
const DT_DOUBLE: i64 = 11;

#[derive(Debug, Default, Clone)]
struct TensorProto {
    name: String,
    dims: Vec<i64>,
    data_type: i64,
    float_data: Vec<f32>,
    double_data: Vec<f64>,
    int_data: Vec<i64>,
    raw_data: Option<Vec<u8>>,
    external: bool,
}

impl TensorProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut t = TensorProto::default();
        for field in Fields::new(buf) {
            let (num, v) = field?;
            match (num, v) {
                (1, Value::Varint(d)) => t.dims.push(d as i64),
                (1, Value::Bytes(b)) => t.dims.extend(packed_varints(b)?.into_iter().map(|d| d as i64)),
                (2, v) => t.data_type = v.as_i64()?,
                (4, Value::Fixed32(f)) => t.float_data.push(f32::from_bits(f)),
                (4, Value::Bytes(b)) => t.float_data.extend(packed_f32(b)?),
                (5 | 7, Value::Varint(i)) => t.int_data.push(i as i64),
                (5 | 7, Value::Bytes(b)) => t.int_data.extend(packed_varints(b)?.into_iter().map(|i| i as i64)),
                (8, v) => t.name = v.as_str()?.to_string(),
                (9, v) => t.raw_data = Some(v.as_bytes()?.to_vec()),
                (10, Value::Fixed64(d)) => t.double_data.push(f64::from_bits(d)),
                (10, Value::Bytes(b)) => t.double_data.extend(packed_f64(b)?),
                (14, v) => t.external = v.as_u64()? == 1,
                _ => {}
            }
        }
        Ok(t)
    }

    fn shape(&self) -> Result<Vec<usize>> {
        self.dims
            .iter()
            .map(|&d| {
                usize::try_from(d)
                    .map_err(|_| Error::Shape(format!("negative dimension {d} in tensor '{}'", self.name)))
            })
            .collect()
    }

    fn numel(&self) -> Result<usize> {
        Ok(self.shape()?.iter().product())
    }

    fn reals(&self) -> Result<Vec<f64>> {
        if self.external {
            return Err(Error::Decode(format!("tensor '{}' uses external data", self.name)));
        }
        let n = self.numel()?;
        let values: Vec<f64> = match (self.data_type, &self.raw_data) {
            (DT_FLOAT, Some(raw)) => packed_f32(raw)?.into_iter().map(f64::from).collect(),
            (DT_FLOAT, None) => self.float_data.iter().map(|&f| f64::from(f)).collect(),
            (DT_DOUBLE, Some(raw)) => packed_f64(raw)?,
            (DT_DOUBLE, None) => self.double_data.clone(),
            (DT_INT64 | DT_INT32, _) => self.ints()?.into_iter().map(|i| i as f64).collect(),
            (dt, _) => {
                return Err(Error::Decode(format!(
                    "tensor '{}' has unsupported data type {dt}",
                    self.name
                )))
            }
        };
        if values.len() != n {
            return Err(Error::Shape(format!(
                "tensor '{}' has {} values for dims {:?}",
                self.name,
                values.len(),
                self.dims
            )));
        }
        Ok(values)
    }

    fn ints(&self) -> Result<Vec<i64>> {
        match (self.data_type, &self.raw_data) {
            (DT_INT64, Some(raw)) if raw.len() % 8 == 0 => Ok(raw
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            (DT_INT32, Some(raw)) if raw.len() % 4 == 0 => Ok(raw
                .chunks_exact(4)
                .map(|c| i64::from(i32::from_le_bytes(c.try_into().unwrap())))
                .collect()),
            (DT_INT64 | DT_INT32, None) => Ok(self.int_data.clone()),
            _ => Err(Error::Decode(format!(
                "tensor '{}' is not an integer tensor",
                self.name
            ))),
        }
    }

    fn to_tensor(&self) -> Result<Tensor> {
        let mut shape = self.shape()?;
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::new(shape, self.reals()?)
    }
}

#[derive(Debug, Default)]
struct Attribute {
    name: String,
    f: Option<f32>,
    i: Option<i64>,
    s: Option<String>,
    t: Option<TensorProto>,
    ints: Vec<i64>,
}

impl Attribute {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut a = Attribute::default();
        for field in Fields::new(buf) {
            let (num, v) = field?;
            match (num, v) {
                (1, v) => a.name = v.as_str()?.to_string(),
                (2, v) => a.f = Some(v.as_f32()?),
                (3, v) => a.i = Some(v.as_i64()?),
                (4, v) => a.s = Some(String::from_utf8_lossy(v.as_bytes()?).into_owned()),
                (5, v) => a.t = Some(TensorProto::decode(v.as_bytes()?)?),
                (8, Value::Varint(i)) => a.ints.push(i as i64),
                (8, Value::Bytes(b)) => a.ints.extend(packed_varints(b)?.into_iter().map(|i| i as i64)),
                _ => {}
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Default)]
struct NodeProto {
    inputs: Vec<String>,
    outputs: Vec<String>,
    op_type: String,
    attributes: Vec<Attribute>,
}

impl NodeProto {
    fn decode(buf: &[u8]) -> Result<Self> {
        let mut n = NodeProto::default();
        for field in Fields::new(buf) {
            let (num, v) = field?;
            match num {
                1 => n.inputs.push(v.as_str()?.to_string()),
                2 => n.outputs.push(v.as_str()?.to_string()),
                4 => n.op_type = v.as_str()?.to_string(),
                5 => n.attributes.push(Attribute::decode(v.as_bytes()?)?),
                _ => {}
            }
        }
        Ok(n)
    }

    fn attr(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    fn attr_i(&self, name: &str, default: i64) -> i64 {
        self.attr(name).and_then(|a| a.i).unwrap_or(default)
    }

    fn attr_f(&self, name: &str, default: f32) -> f32 {
        self.attr(name).and_then(|a| a.f).unwrap_or(default)
    }

    fn attr_ints(&self, name: &str) -> Option<&[i64]> {
        self.attr(name).map(|a| a.ints.as_slice())
    }

    fn unsupported(&self, detail: &str) -> Error {
        Error::UnsupportedOperator(format!("{}({detail})", self.op_type))
    }
}

#[derive(Debug)]
struct ValueInfo {
    name: String,
    /// `None` entries are symbolic dimensions.
    dims: Option<Vec<Option<i64>>>,
}

fn decode_value_info(buf: &[u8]) -> Result<ValueInfo> {
    let mut info = ValueInfo {
        name: String::new(),
        dims: None,
    };
    for field in Fields::new(buf) {
        let (num, v) = field?;
        match num {
            1 => info.name = v.as_str()?.to_string(),
            2 => {
                // TypeProto.tensor_type -> shape -> dim -> dim_value
                for tf in Fields::new(v.as_bytes()?) {
                    let (tn, tv) = tf?;
                    if tn != 1 {
                        continue;
                    }
                    for sf in Fields::new(tv.as_bytes()?) {
                        let (sn, sv) = sf?;
                        if sn != 2 {
                            continue;
                        }
                        let mut dims = Vec::new();
                        for df in Fields::new(sv.as_bytes()?) {
                            let (dn, dv) = df?;
                            if dn != 1 {
                                continue;
                            }
                            let mut value = None;
                            for ef in Fields::new(dv.as_bytes()?) {
                                let (en, ev) = ef?;
                                if en == 1 {
                                    value = Some(ev.as_i64()?);
                                }
                            }
                            dims.push(value);
                        }
                        info.dims = Some(dims);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(info)
}

struct GraphProto {
    nodes: Vec<NodeProto>,
    initializers: Vec<TensorProto>,
    inputs: Vec<ValueInfo>,
    outputs: Vec<ValueInfo>,
}

fn decode_model(bytes: &[u8]) -> Result<GraphProto> {
    let mut graph_bytes = None;
    for field in Fields::new(bytes) {
        let (num, v) = field?;
        if num == 7 {
            graph_bytes = Some(v.as_bytes()?);
        }
    }
    let graph_bytes = graph_bytes.ok_or_else(|| Error::Decode("model has no graph".into()))?;
    let mut g = GraphProto {
        nodes: Vec::new(),
        initializers: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    for field in Fields::new(graph_bytes) {
        let (num, v) = field?;
        match num {
            1 => g.nodes.push(NodeProto::decode(v.as_bytes()?)?),
            5 => g.initializers.push(TensorProto::decode(v.as_bytes()?)?),
            11 => g.inputs.push(decode_value_info(v.as_bytes()?)?),
            12 => g.outputs.push(decode_value_info(v.as_bytes()?)?),
            _ => {}
        }
    }
    Ok(g)
}

/// Strips the leading batch dimension (which must be 1 or symbolic).
fn internal_shape(dims: &[Option<i64>], what: &str) -> Result<Vec<usize>> {
    let concrete = |d: &Option<i64>| -> Result<usize> {
        match d {
            Some(v) if *v > 0 => Ok(*v as usize),
            _ => Err(Error::Shape(format!("{what} has a non-positive or symbolic dimension"))),
        }
    };
    match dims {
        [] => Err(Error::Shape(format!("{what} is a scalar"))),
        [only] => Ok(vec![concrete(only)?]),
        [batch, rest @ ..] => {
            if !matches!(batch, None | Some(1)) {
                return Err(Error::Shape(format!(
                    "{what} has batch dimension {batch:?}, expected 1"
                )));
            }
            rest.iter().map(concrete).collect()
        }
    }
}

fn pair(v: Option<&[i64]>, default: usize, what: &str) -> Result<[usize; 2]> {
    match v {
        None => Ok([default; 2]),
        Some([a, b]) if *a >= 0 && *b >= 0 => Ok([*a as usize, *b as usize]),
        Some(other) => Err(Error::Shape(format!("{what} {other:?} is not a 2-D attribute"))),
    }
}

fn pads4(v: Option<&[i64]>) -> Result<[usize; 4]> {
    match v {
        None => Ok([0; 4]),
        Some([a, b, c, d]) if [a, b, c, d].iter().all(|x| **x >= 0) => {
            Ok([*a as usize, *b as usize, *c as usize, *d as usize])
        }
        Some(other) => Err(Error::Shape(format!("pads {other:?} is not a 2-D padding"))),
    }
}

fn check_window_attrs(node: &NodeProto) -> Result<()> {
    if let Some(d) = node.attr_ints("dilations") {
        if d.iter().any(|&v| v != 1) {
            return Err(node.unsupported("dilations"));
        }
    }
    if let Some(s) = node.attr("auto_pad").and_then(|a| a.s.as_deref()) {
        if !matches!(s, "NOTSET" | "VALID" | "") {
            return Err(node.unsupported(&format!("auto_pad={s}")));
        }
    }
    if node.attr_i("ceil_mode", 0) != 0 {
        return Err(node.unsupported("ceil_mode"));
    }
    Ok(())
}

enum Slot {
    Value(ValueId),
    Const(TensorProto),
}

struct Loader {
    builder: GraphBuilder,
    slots: HashMap<String, Slot>,
    consumers: HashMap<String, usize>,
    /// Dense nodes produced from a bare MatMul, awaiting an Add to fuse.
    bare_matmul: HashMap<ValueId, usize>,
}

impl Loader {
    fn value(&self, node: &NodeProto, idx: usize) -> Result<ValueId> {
        let name = node
            .inputs
            .get(idx)
            .ok_or_else(|| Error::Shape(format!("{} is missing input {idx}", node.op_type)))?;
        match self.slots.get(name) {
            Some(Slot::Value(v)) => Ok(*v),
            Some(Slot::Const(_)) => {
                Err(node.unsupported(&format!("constant operand '{name}' where an activation is expected")))
            }
            None => Err(Error::Shape(format!("{} input '{name}' is undefined", node.op_type))),
        }
    }

    fn constant(&self, node: &NodeProto, idx: usize) -> Result<&TensorProto> {
        let name = node
            .inputs
            .get(idx)
            .filter(|n| !n.is_empty())
            .ok_or_else(|| Error::Shape(format!("{} is missing input {idx}", node.op_type)))?;
        match self.slots.get(name) {
            Some(Slot::Const(t)) => Ok(t),
            Some(Slot::Value(_)) => Err(node.unsupported(&format!("non-constant weight '{name}'"))),
            None => Err(Error::Shape(format!("{} input '{name}' is undefined", node.op_type))),
        }
    }

    fn optional_constant(&self, node: &NodeProto, idx: usize) -> Result<Option<&TensorProto>> {
        match node.inputs.get(idx) {
            Some(n) if !n.is_empty() => self.constant(node, idx).map(Some),
            _ => Ok(None),
        }
    }

    fn is_const(&self, name: &str) -> bool {
        matches!(self.slots.get(name), Some(Slot::Const(_)))
    }

    fn vector(&self, t: &TensorProto, len: usize, what: &str) -> Result<Vec<f64>> {
        let v = t.reals()?;
        if v.len() == len {
            Ok(v)
        } else if v.len() == 1 {
            Ok(vec![v[0]; len])
        } else {
            Err(Error::Shape(format!("{what} has {} values, expected {len}", v.len())))
        }
    }

    fn convert(&mut self, node: &NodeProto) -> Result<()> {
        let out_name = node
            .outputs
            .first()
            .ok_or_else(|| Error::Shape(format!("{} node has no output", node.op_type)))?
            .clone();
        let value = match node.op_type.as_str() {
            "Constant" => {
                let t = node
                    .attr("value")
                    .and_then(|a| a.t.clone())
                    .ok_or_else(|| node.unsupported("non-tensor value"))?;
                self.slots.insert(out_name, Slot::Const(t));
                return Ok(());
            }
            "Gemm" => {
                let x = self.value(node, 0)?;
                if node.attr_i("transA", 0) != 0 {
                    return Err(node.unsupported("transA"));
                }
                let alpha = f64::from(node.attr_f("alpha", 1.0));
                let beta = f64::from(node.attr_f("beta", 1.0));
                let b = self.constant(node, 1)?;
                let bs = b.shape()?;
                if bs.len() != 2 {
                    return Err(Error::Shape(format!("Gemm weight has shape {bs:?}")));
                }
                let data = b.reals()?;
                let (rows, cols) = if node.attr_i("transB", 0) != 0 {
                    (bs[0], bs[1])
                } else {
                    (bs[1], bs[0])
                };
                let mut w = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let v = if node.attr_i("transB", 0) != 0 {
                            data[r * cols + c]
                        } else {
                            data[c * rows + r]
                        };
                        w[r * cols + c] = if alpha == 1.0 { v } else { alpha * v };
                    }
                }
                let bias = match self.optional_constant(node, 2)? {
                    Some(c) => self
                        .vector(c, rows, "Gemm bias")?
                        .into_iter()
                        .map(|v| if beta == 1.0 { v } else { beta * v })
                        .collect(),
                    None => vec![0.0; rows],
                };
                self.builder.push(
                    Op::Dense {
                        weight: Tensor::new(vec![rows, cols], w)?,
                        bias,
                    },
                    vec![x],
                )?
            }
            "MatMul" => {
                let x = self.value(node, 0)?;
                let b = self.constant(node, 1)?;
                let bs = b.shape()?;
                if bs.len() != 2 {
                    return Err(Error::Shape(format!("MatMul weight has shape {bs:?}")));
                }
                let (k, n) = (bs[0], bs[1]);
                let data = b.reals()?;
                let mut w = vec![0.0; n * k];
                for r in 0..n {
                    for c in 0..k {
                        w[r * k + c] = data[c * n + r];
                    }
                }
                let v = self.builder.push(
                    Op::Dense {
                        weight: Tensor::new(vec![n, k], w)?,
                        bias: vec![0.0; n],
                    },
                    vec![x],
                )?;
                if self.consumers.get(&out_name).copied() == Some(1) {
                    self.bare_matmul.insert(v, n);
                }
                v
            }
            "Add" => {
                let (a, b) = (&node.inputs[0], node.inputs.get(1).cloned().unwrap_or_default());
                match (self.is_const(a), self.is_const(&b)) {
                    (false, false) => {
                        let x = self.value(node, 0)?;
                        let y = self.value(node, 1)?;
                        self.builder.push(Op::Add { constant: None }, vec![x, y])?
                    }
                    (true, true) => return Err(node.unsupported("both operands constant")),
                    (a_const, _) => {
                        let (vi, ci) = if a_const { (1, 0) } else { (0, 1) };
                        let x = self.value(node, vi)?;
                        let c = self.constant(node, ci)?.to_tensor()?;
                        if let Some(n) = self.bare_matmul.remove(&x) {
                            if c.len() == n && self.builder.set_dense_bias(x, c.data().to_vec()) {
                                self.slots.insert(out_name, Slot::Value(x));
                                return Ok(());
                            }
                        }
                        self.builder.push(Op::Add { constant: Some(c) }, vec![x])?
                    }
                }
            }
            "Conv" => {
                check_window_attrs(node)?;
                if node.attr_i("group", 1) != 1 {
                    return Err(node.unsupported("group"));
                }
                let x = self.value(node, 0)?;
                let weight = self.constant(node, 1)?.to_tensor()?;
                if weight.shape().len() != 4 {
                    return Err(node.unsupported("non-2-D kernel"));
                }
                let m = weight.shape()[0];
                let bias = match self.optional_constant(node, 2)? {
                    Some(b) => self.vector(b, m, "Conv bias")?,
                    None => vec![0.0; m],
                };
                if let Some(ks) = node.attr_ints("kernel_shape") {
                    if ks.len() != 2 || ks[0] as usize != weight.shape()[2] || ks[1] as usize != weight.shape()[3] {
                        return Err(Error::Shape(format!("kernel_shape {ks:?} disagrees with weight")));
                    }
                }
                self.builder.push(
                    Op::Conv2d {
                        weight,
                        bias,
                        strides: pair(node.attr_ints("strides"), 1, "strides")?,
                        pads: pads4(node.attr_ints("pads"))?,
                    },
                    vec![x],
                )?
            }
            "Relu" => self.unary(node, Op::Relu)?,
            "Sigmoid" => self.unary(node, Op::Sigmoid)?,
            "Tanh" => self.unary(node, Op::Tanh)?,
            "MaxPool" | "AveragePool" => {
                check_window_attrs(node)?;
                if node.outputs.len() > 1 {
                    return Err(node.unsupported("indices output"));
                }
                let x = self.value(node, 0)?;
                let kernel = pair(node.attr_ints("kernel_shape"), 0, "kernel_shape")?;
                let strides = pair(node.attr_ints("strides"), 1, "strides")?;
                let pads = pads4(node.attr_ints("pads"))?;
                let op = if node.op_type == "MaxPool" {
                    Op::MaxPool2d { kernel, strides, pads }
                } else {
                    Op::AvgPool2d {
                        kernel,
                        strides,
                        pads,
                        count_include_pad: node.attr_i("count_include_pad", 0) != 0,
                    }
                };
                self.builder.push(op, vec![x])?
            }
            "BatchNormalization" => {
                if node.attr_i("training_mode", 0) != 0 {
                    return Err(node.unsupported("training_mode"));
                }
                let x = self.value(node, 0)?;
                let c = self.builder.shape_of(x)?[0];
                let gamma = self.vector(self.constant(node, 1)?, c, "BatchNormalization scale")?;
                let beta = self.vector(self.constant(node, 2)?, c, "BatchNormalization bias")?;
                let mean = self.vector(self.constant(node, 3)?, c, "BatchNormalization mean")?;
                let var = self.vector(self.constant(node, 4)?, c, "BatchNormalization var")?;
                self.builder.push(
                    Op::BatchNorm {
                        gamma,
                        beta,
                        mean,
                        var,
                        epsilon: f64::from(node.attr_f("epsilon", 1e-5)),
                    },
                    vec![x],
                )?
            }
            "Flatten" => {
                let x = self.value(node, 0)?;
                let rank = self.builder.shape_of(x)?.len() as i64 + 1;
                let mut axis = node.attr_i("axis", 1);
                if axis < 0 {
                    axis += rank;
                }
                if axis > 1 {
                    return Err(node.unsupported(&format!("axis={axis}")));
                }
                self.builder.push(Op::Flatten, vec![x])?
            }
            "Reshape" => {
                let x = self.value(node, 0)?;
                let target = self.constant(node, 1)?.ints()?;
                let mut full = vec![1usize];
                full.extend_from_slice(self.builder.shape_of(x)?);
                let shape = resolve_reshape(&full, &target)?;
                self.builder.push(Op::Reshape { shape }, vec![x])?
            }
            other => return Err(Error::UnsupportedOperator(other.to_string())),
        };
        self.slots.insert(out_name, Slot::Value(value));
        Ok(())
    }

    fn unary(&mut self, node: &NodeProto, op: Op) -> Result<ValueId> {
        let x = self.value(node, 0)?;
        self.builder.push(op, vec![x])
    }
}

/// Resolves an ONNX reshape target against the batched input shape and drops
/// the batch dimension again.
fn resolve_reshape(full: &[usize], target: &[i64]) -> Result<Vec<usize>> {
    let total: usize = full.iter().product();
    let mut out = Vec::with_capacity(target.len());
    let mut infer = None;
    for (i, &t) in target.iter().enumerate() {
        match t {
            0 => out.push(
                *full
                    .get(i)
                    .ok_or_else(|| Error::Shape("reshape copies a missing dimension".into()))?,
            ),
            -1 if infer.is_none() => {
                infer = Some(i);
                out.push(1);
            }
            t if t > 0 => out.push(t as usize),
            _ => return Err(Error::Shape(format!("invalid reshape target {target:?}"))),
        }
    }
    if let Some(i) = infer {
        let known: usize = out.iter().product();
        if known == 0 || !total.is_multiple_of(known) {
            return Err(Error::Shape(format!("cannot infer reshape target {target:?}")));
        }
        out[i] = total / known;
    }
    if out.iter().product::<usize>() != total {
        return Err(Error::Shape(format!("cannot reshape {full:?} to {target:?}")));
    }
    if out.len() >= 2 && out[0] == 1 {
        out.remove(0);
    }
    Ok(out)
}

/// Decodes an ONNX model into a validated [`NetworkGraph`].
pub fn load_onnx(bytes: &[u8]) -> Result<NetworkGraph> {
    let g = decode_model(bytes)?;
    let mut slots = HashMap::new();
    for init in &g.initializers {
        slots.insert(init.name.clone(), Slot::Const(init.clone()));
    }
    let real_inputs: Vec<&ValueInfo> = g.inputs.iter().filter(|i| !slots.contains_key(&i.name)).collect();
    let [input] = real_inputs.as_slice() else {
        return Err(Error::Shape(format!(
            "expected exactly one graph input, found {}",
            real_inputs.len()
        )));
    };
    let [output] = g.outputs.as_slice() else {
        return Err(Error::Shape(format!(
            "expected exactly one graph output, found {}",
            g.outputs.len()
        )));
    };
    let dims = input
        .dims
        .as_ref()
        .ok_or_else(|| Error::Shape(format!("input '{}' has no shape", input.name)))?;
    let builder = GraphBuilder::new(internal_shape(dims, "graph input")?)?;
    slots.insert(input.name.clone(), Slot::Value(0));

    let mut consumers: HashMap<String, usize> = HashMap::new();
    for n in &g.nodes {
        for i in &n.inputs {
            *consumers.entry(i.clone()).or_insert(0) += 1;
        }
    }
    *consumers.entry(output.name.clone()).or_insert(0) += 1;

    let mut loader = Loader {
        builder,
        slots,
        consumers,
        bare_matmul: HashMap::new(),
    };
    for node in &g.nodes {
        loader.convert(node)?;
    }
    let out = match loader.slots.get(&output.name) {
        Some(Slot::Value(v)) => *v,
        _ => return Err(Error::Shape(format!("graph output '{}' is not computed", output.name))),
    };
    let net = loader.builder.finish_at(out)?;
    if let Some(dims) = &output.dims {
        if let Ok(shape) = internal_shape(dims, "graph output") {
            if shape.iter().product::<usize>() != net.d_out() {
                return Err(Error::Shape(format!(
                    "declared output shape {shape:?} disagrees with computed {:?}",
                    net.output_shape()
                )));
            }
        }
    }
    Ok(net)
}

fn value_info(name: &str, shape: &[usize]) -> Writer {
    let mut dims = Writer::new();
    for d in std::iter::once(1).chain(shape.iter().copied()) {
        let mut dim = Writer::new();
        dim.int64(1, d as i64);
        dims.message(1, dim);
    }
    let mut tensor_type = Writer::new();
    tensor_type.int64(1, DT_DOUBLE).message(2, dims);
    let mut ty = Writer::new();
    ty.message(1, tensor_type);
    let mut vi = Writer::new();
    vi.string(1, name).message(2, ty);
    vi
}

fn tensor_proto(name: &str, dims: &[i64], data: &[f64]) -> Writer {
    let mut t = Writer::new();
    for &d in dims {
        t.int64(1, d);
    }
    t.int64(2, DT_DOUBLE).string(8, name);
    let raw: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    t.bytes(9, &raw);
    t
}

fn int_tensor_proto(name: &str, values: &[i64]) -> Writer {
    let mut t = Writer::new();
    t.int64(1, values.len() as i64).int64(2, DT_INT64).string(8, name);
    let raw: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    t.bytes(9, &raw);
    t
}

fn ints_attr(name: &str, values: &[usize]) -> Writer {
    let mut a = Writer::new();
    a.string(1, name);
    for &v in values {
        a.int64(8, v as i64);
    }
    a.int64(20, 7);
    a
}

fn int_attr(name: &str, value: i64) -> Writer {
    let mut a = Writer::new();
    a.string(1, name).int64(3, value).int64(20, 2);
    a
}

fn float_attr(name: &str, value: f32) -> Writer {
    let mut a = Writer::new();
    a.string(1, name).fixed32(2, value.to_bits()).int64(20, 1);
    a
}

/// Serializes a graph as an ONNX model (opset 13) with double-precision
/// initializers, so that [`load_onnx`] reproduces it exactly.
pub fn save_onnx(net: &NetworkGraph) -> Vec<u8> {
    let name = |v: ValueId| {
        if v == 0 {
            "input".to_string()
        } else if v == net.output_value() {
            "output".to_string()
        } else {
            format!("v{v}")
        }
    };
    let mut graph = Writer::new();
    let mut initializers = Vec::new();
    for (k, node) in net.nodes().iter().enumerate() {
        let v = k + 1;
        let mut n = Writer::new();
        let mut inputs: Vec<String> = node.inputs.iter().map(|&i| name(i)).collect();
        let mut attrs = Vec::new();
        let op_type = match &node.op {
            Op::Dense { weight, bias } => {
                let (w, b) = (format!("W{v}"), format!("B{v}"));
                let ws = weight.shape();
                initializers.push(tensor_proto(&w, &[ws[0] as i64, ws[1] as i64], weight.data()));
                initializers.push(tensor_proto(&b, &[bias.len() as i64], bias));
                inputs.extend([w, b]);
                attrs.push(int_attr("transB", 1));
                "Gemm"
            }
            Op::Conv2d {
                weight,
                bias,
                strides,
                pads,
            } => {
                let (w, b) = (format!("W{v}"), format!("B{v}"));
                let dims: Vec<i64> = weight.shape().iter().map(|&d| d as i64).collect();
                initializers.push(tensor_proto(&w, &dims, weight.data()));
                initializers.push(tensor_proto(&b, &[bias.len() as i64], bias));
                inputs.extend([w, b]);
                attrs.push(ints_attr("kernel_shape", &weight.shape()[2..]));
                attrs.push(ints_attr("strides", strides));
                attrs.push(ints_attr("pads", pads));
                "Conv"
            }
            Op::Relu => "Relu",
            Op::Sigmoid => "Sigmoid",
            Op::Tanh => "Tanh",
            Op::MaxPool2d { kernel, strides, pads } => {
                attrs.push(ints_attr("kernel_shape", kernel));
                attrs.push(ints_attr("strides", strides));
                attrs.push(ints_attr("pads", pads));
                "MaxPool"
            }
            Op::AvgPool2d {
                kernel,
                strides,
                pads,
                count_include_pad,
            } => {
                attrs.push(ints_attr("kernel_shape", kernel));
                attrs.push(ints_attr("strides", strides));
                attrs.push(ints_attr("pads", pads));
                attrs.push(int_attr("count_include_pad", i64::from(*count_include_pad)));
                "AveragePool"
            }
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                epsilon,
            } => {
                for (tag, data) in [("scale", gamma), ("bias", beta), ("mean", mean), ("var", var)] {
                    let t = format!("bn{v}_{tag}");
                    initializers.push(tensor_proto(&t, &[data.len() as i64], data));
                    inputs.push(t);
                }
                attrs.push(float_attr("epsilon", *epsilon as f32));
                "BatchNormalization"
            }
            Op::Add { constant } => {
                if let Some(c) = constant {
                    let t = format!("C{v}");
                    let mut dims = vec![1i64];
                    dims.extend(c.shape().iter().map(|&d| d as i64));
                    initializers.push(tensor_proto(&t, &dims, c.data()));
                    inputs.push(t);
                }
                "Add"
            }
            Op::Flatten => {
                attrs.push(int_attr("axis", 1));
                "Flatten"
            }
            Op::Reshape { shape } => {
                let t = format!("S{v}");
                let mut target = vec![1i64];
                target.extend(shape.iter().map(|&d| d as i64));
                initializers.push(int_tensor_proto(&t, &target));
                inputs.push(t);
                "Reshape"
            }
        };
        for i in &inputs {
            n.string(1, i);
        }
        n.string(2, &name(v)).string(3, &format!("node{v}")).string(4, op_type);
        for a in attrs {
            n.message(5, a);
        }
        graph.message(1, n);
    }
    graph.string(2, "vnn-arena");
    for init in initializers {
        graph.message(5, init);
    }
    graph.message(11, value_info("input", net.input_shape()));
    graph.message(12, value_info(&name(net.output_value()), net.output_shape()));

    let mut opset = Writer::new();
    opset.string(1, "").int64(2, 13);
    let mut model = Writer::new();
    model
        .int64(1, 8)
        .string(2, "vnn-arena")
        .message(8, opset)
        .message(7, graph);
    model.finish()
}
