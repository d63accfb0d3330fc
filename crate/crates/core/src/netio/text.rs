//! Plain-text network format.
//!
//! Line-oriented and whitespace-separated; `#` starts a comment. The file
//! opens with `inputs <d1> [<d2> ...]` giving the input shape (no batch
//! axis) and may declare `outputs <d1> ...`, which is checked against the
//! final shape. Every other directive appends one operation to the current
//! value. Numeric payloads follow their directive and may span lines.
//!
//! ```text
//! dense <rows> <cols>           rows*cols weights (row-major), then rows biases
//! conv <m> <c> <kh> <kw> [stride <sh> <sw>] [pad <t> <l> <b> <r>]
//!                               m*c*kh*kw weights, then m biases
//! relu | sigmoid | tanh
//! maxpool <kh> <kw> [stride <sh> <sw>] [pad <t> <l> <b> <r>]
//! avgpool <kh> <kw> [stride <sh> <sw>] [pad <t> <l> <b> <r>] [include_pad]
//! batchnorm <c> <epsilon>       c gammas, c betas, c means, c variances
//! addconst                      one value per element of the current value
//! flatten
//! reshape <d1> [<d2> ...]
//! save <name>                   label the current value
//! use <name>                    make a labelled value current
//! add <name>                    current + labelled value
//! ```
//!
//! The network input is pre-labelled `input`.

use std::collections::HashMap;
use std::fmt::Write;

use super::{GraphBuilder, NetworkGraph, Op, Tensor, ValueId};
use crate::error::{Error, Pos, Result};
use crate::speclang::sexpr::parse_real;

struct Token<'a> {
    text: &'a str,
    pos: Pos,
}

struct Tokens<'a> {
    items: Vec<Token<'a>>,
    next: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            let mut col = 0;
            for piece in line.split_inclusive(char::is_whitespace) {
                let word = piece.trim_end();
                if !word.is_empty() {
                    items.push(Token {
                        text: word,
                        pos: Pos {
                            line: ln + 1,
                            col: col + 1,
                        },
                    });
                }
                col += piece.chars().count();
            }
        }
        Tokens { items, next: 0 }
    }

    fn end_pos(&self) -> Pos {
        self.items.last().map(|t| t.pos).unwrap_or(Pos { line: 1, col: 1 })
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.items.get(self.next)
    }

    fn word(&mut self, what: &str) -> Result<&Token<'a>> {
        let end = self.end_pos();
        let t = self
            .items
            .get(self.next)
            .ok_or_else(|| Error::syntax(end, format!("unexpected end of input, expected {what}")))?;
        self.next += 1;
        Ok(t)
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let t = self.word(what)?;
        t.text
            .parse::<usize>()
            .map_err(|_| Error::syntax(t.pos, format!("expected {what}, found '{}'", t.text)))
    }

    fn real(&mut self) -> Result<f64> {
        let t = self.word("a number")?;
        parse_real(t.text).ok_or_else(|| Error::syntax(t.pos, format!("expected a number, found '{}'", t.text)))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.real()).collect()
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let mut dims = Vec::new();
        while let Some(t) = self.peek() {
            match t.text.parse::<usize>() {
                Ok(d) => {
                    dims.push(d);
                    self.next += 1;
                }
                Err(_) => break,
            }
        }
        Ok(dims)
    }

    fn accept(&mut self, word: &str) -> bool {
        if self.peek().is_some_and(|t| t.text == word) {
            self.next += 1;
            true
        } else {
            false
        }
    }

    fn window_options(&mut self) -> Result<([usize; 2], [usize; 4])> {
        let mut strides = [1, 1];
        let mut pads = [0; 4];
        loop {
            if self.accept("stride") {
                strides = [self.count("stride")?, self.count("stride")?];
            } else if self.accept("pad") {
                for p in &mut pads {
                    *p = self.count("padding")?;
                }
            } else {
                return Ok((strides, pads));
            }
        }
    }
}

/// Parses the plain-text network format.
pub fn load_network_text(text: &str) -> Result<NetworkGraph> {
    let mut toks = Tokens::new(text);
    let head = toks.word("'inputs'")?;
    if head.text != "inputs" {
        return Err(Error::syntax(head.pos, "network file must start with 'inputs'"));
    }
    let head_pos = head.pos;
    let input_shape = toks.dims()?;
    if input_shape.is_empty() {
        return Err(Error::syntax(head_pos, "'inputs' needs at least one dimension"));
    }
    let mut builder = GraphBuilder::new(input_shape)?;
    let mut labels: HashMap<String, ValueId> = HashMap::from([("input".to_string(), 0)]);
    let mut current: ValueId = 0;
    let mut declared_output = None;

    while let Some(t) = toks.peek() {
        let (word, pos) = (t.text, t.pos);
        toks.next += 1;
        let label = |toks: &mut Tokens, labels: &HashMap<String, ValueId>| -> Result<ValueId> {
            let t = toks.word("a label")?;
            labels
                .get(t.text)
                .copied()
                .ok_or_else(|| Error::syntax(t.pos, format!("unknown label '{}'", t.text)))
        };
        let op = match word {
            "outputs" => {
                declared_output = Some((toks.dims()?, pos));
                continue;
            }
            "save" => {
                let name = toks.word("a label")?.text.to_string();
                labels.insert(name, current);
                continue;
            }
            "use" => {
                current = label(&mut toks, &labels)?;
                continue;
            }
            "add" => {
                let other = label(&mut toks, &labels)?;
                current = builder.push(Op::Add { constant: None }, vec![current, other])?;
                continue;
            }
            "dense" => {
                let rows = toks.count("row count")?;
                let cols = toks.count("column count")?;
                let w = toks.reals(rows * cols)?;
                let bias = toks.reals(rows)?;
                Op::Dense {
                    weight: Tensor::new(vec![rows, cols], w)?,
                    bias,
                }
            }
            "conv" => {
                let m = toks.count("output channels")?;
                let c = toks.count("input channels")?;
                let kh = toks.count("kernel height")?;
                let kw = toks.count("kernel width")?;
                let (strides, pads) = toks.window_options()?;
                let w = toks.reals(m * c * kh * kw)?;
                let bias = toks.reals(m)?;
                Op::Conv2d {
                    weight: Tensor::new(vec![m, c, kh, kw], w)?,
                    bias,
                    strides,
                    pads,
                }
            }
            "relu" => Op::Relu,
            "sigmoid" => Op::Sigmoid,
            "tanh" => Op::Tanh,
            "maxpool" | "avgpool" => {
                let kernel = [toks.count("kernel height")?, toks.count("kernel width")?];
                let (strides, pads) = toks.window_options()?;
                if word == "maxpool" {
                    Op::MaxPool2d { kernel, strides, pads }
                } else {
                    Op::AvgPool2d {
                        kernel,
                        strides,
                        pads,
                        count_include_pad: toks.accept("include_pad"),
                    }
                }
            }
            "batchnorm" => {
                let c = toks.count("channel count")?;
                let epsilon = toks.real()?;
                Op::BatchNorm {
                    gamma: toks.reals(c)?,
                    beta: toks.reals(c)?,
                    mean: toks.reals(c)?,
                    var: toks.reals(c)?,
                    epsilon,
                }
            }
            "addconst" => {
                let shape = builder.shape_of(current)?.to_vec();
                let n = shape.iter().product();
                Op::Add {
                    constant: Some(Tensor::new(shape, toks.reals(n)?)?),
                }
            }
            "flatten" => Op::Flatten,
            "reshape" => {
                let dims = toks.dims()?;
                if dims.is_empty() {
                    return Err(Error::syntax(pos, "'reshape' needs at least one dimension"));
                }
                Op::Reshape { shape: dims }
            }
            other => return Err(Error::syntax(pos, format!("unknown directive '{other}'"))),
        };
        current = builder.push(op, vec![current])?;
    }

    let net = builder.finish_at(current)?;
    if let Some((dims, pos)) = declared_output {
        if dims.iter().product::<usize>() != net.d_out() || dims.is_empty() {
            return Err(Error::Shape(format!(
                "declared outputs {dims:?} at {pos} but the network produces {:?}",
                net.output_shape()
            )));
        }
    }
    Ok(net)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn join_dims(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn window(strides: &[usize; 2], pads: &[usize; 4]) -> String {
    format!(" stride {} pad {}", join_dims(strides), join_dims(pads))
}

/// Writes a graph in the plain-text format; numbers use round-trip notation.
pub fn print_network_text(net: &NetworkGraph) -> String {
    let nodes = net.nodes();
    // Values referenced other than as the primary input of the next node.
    let mut needs_label = vec![false; nodes.len() + 1];
    for (k, node) in nodes.iter().enumerate() {
        if node.inputs[0] != k {
            needs_label[node.inputs[0]] = true;
        }
        if let Some(&other) = node.inputs.get(1) {
            needs_label[other] = true;
        }
    }
    let name = |v: ValueId| if v == 0 { "input".to_string() } else { format!("v{v}") };

    let mut out = String::new();
    let _ = writeln!(out, "inputs {}", join_dims(net.input_shape()));
    let _ = writeln!(out, "outputs {}", join_dims(net.output_shape()));
    let mut current = 0;
    for (k, node) in nodes.iter().enumerate() {
        let v = k + 1;
        if node.inputs[0] != current {
            let _ = writeln!(out, "use {}", name(node.inputs[0]));
        }
        match &node.op {
            Op::Dense { weight, bias } => {
                let s = weight.shape();
                let _ = writeln!(out, "dense {} {}", s[0], s[1]);
                for row in weight.data().chunks(s[1]) {
                    let _ = writeln!(out, "  {}", join(row));
                }
                let _ = writeln!(out, "  {}", join(bias));
            }
            Op::Conv2d {
                weight,
                bias,
                strides,
                pads,
            } => {
                let _ = writeln!(out, "conv {}{}", join_dims(weight.shape()), window(strides, pads));
                for chunk in weight.data().chunks(weight.shape()[3]) {
                    let _ = writeln!(out, "  {}", join(chunk));
                }
                let _ = writeln!(out, "  {}", join(bias));
            }
            Op::Relu => out.push_str("relu\n"),
            Op::Sigmoid => out.push_str("sigmoid\n"),
            Op::Tanh => out.push_str("tanh\n"),
            Op::MaxPool2d { kernel, strides, pads } => {
                let _ = writeln!(out, "maxpool {}{}", join_dims(kernel), window(strides, pads));
            }
            Op::AvgPool2d {
                kernel,
                strides,
                pads,
                count_include_pad,
            } => {
                let _ = writeln!(
                    out,
                    "avgpool {}{}{}",
                    join_dims(kernel),
                    window(strides, pads),
                    if *count_include_pad { " include_pad" } else { "" }
                );
            }
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                epsilon,
            } => {
                let _ = writeln!(out, "batchnorm {} {epsilon:?}", gamma.len());
                for p in [gamma, beta, mean, var] {
                    let _ = writeln!(out, "  {}", join(p));
                }
            }
            Op::Add { constant: Some(c) } => {
                let _ = writeln!(out, "addconst\n  {}", join(c.data()));
            }
            Op::Add { constant: None } => {
                let _ = writeln!(out, "add {}", name(node.inputs[1]));
            }
            Op::Flatten => out.push_str("flatten\n"),
            Op::Reshape { shape } => {
                let _ = writeln!(out, "reshape {}", join_dims(shape));
            }
        }
        current = v;
        if needs_label[v] {
            let _ = writeln!(out, "save {}", name(v));
        }
    }
    out
}
