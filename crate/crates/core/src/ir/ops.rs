//! Operator compilation: attribute parsing, shape inference, and the linear
//! kernels shared by plain evaluation and affine propagation.
//!
//! Every linear operator is applied as `y = L(x) + c`. Plain evaluation uses
//! `with_offset = true`; the coefficient half of an affine tensor uses
//! `with_offset = false` so that only the linear part `L` acts on it.

use std::collections::{BTreeMap, HashMap};

use serde_json::Value;

use super::{NodeSpec, OpType, TensorSig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub slot_shapes: Vec<Vec<usize>>,
    pub slot_names: Vec<String>,
    pub input_slots: Vec<usize>,
    pub output_slots: Vec<usize>,
    /// Slot feeding each output's terminal Sigmoid, or the output slot itself.
    pub pre_sigmoid_slots: Vec<usize>,
    pub output_sigmoid: Vec<bool>,
    pub nodes: Vec<CompiledNode>,
    /// Direct downstream nodes of every node.
    pub consumers: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub(crate) enum Operand {
    Slot(usize),
    Const(Tensor),
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledNode {
    pub name: String,
    pub op_type: OpType,
    pub op: Op,
    pub inputs: Vec<Operand>,
    pub output: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub dilation: (usize, usize),
    pub group: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Conv(Box<ConvGeometry>),
    ConvTranspose(Box<ConvGeometry>),
    /// `y[.., m, :] = alpha * x[.., m, :] @ rhs + offset`.
    Dense {
        rows: usize,
        k: usize,
        n: usize,
        trans_a: bool,
        alpha: f64,
        rhs: Vec<f64>,
        offset: Option<Vec<f64>>,
    },
    /// Broadcasting add (`sign = 1`) or subtract (`sign = -1`).
    Binary {
        sign: f64,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    Scale(f64),
    /// Mean over index windows (average pooling).
    WindowMean {
        windows: Vec<Vec<usize>>,
    },
    /// Per-channel `scale * x + shift` (inference batch norm).
    ChannelAffine {
        scale: Vec<f64>,
        shift: Vec<f64>,
        inner: usize,
    },
    Identity,
    Gather(Vec<usize>),
    Concat(Vec<(usize, usize)>),
    Relu,
    LeakyRelu(f64),
    Abs,
    Sigmoid,
    MaxPool {
        windows: Vec<Vec<usize>>,
    },
}

impl Op {
    /// Applies the linear operator to flat inputs. `with_offset` adds the
    /// constant term (bias, shift); without it only the linear part acts.
    pub fn apply_linear(&self, inputs: &[&[f64]], out_len: usize, with_offset: bool) -> Vec<f64> {
        match self {
            Op::Conv(g) => conv2d(g, inputs[0], with_offset),
            Op::ConvTranspose(g) => conv_transpose2d(g, inputs[0], with_offset),
            Op::Dense { rows, k, n, trans_a, alpha, rhs, offset } => {
                let x = inputs[0];
                let mut out = match (offset, with_offset) {
                    (Some(c), true) => c.clone(),
                    _ => vec![0.0; out_len],
                };
                let batch = out_len / (rows * n);
                for bi in 0..batch {
                    for r in 0..*rows {
                        let orow = &mut out[(bi * rows + r) * n..(bi * rows + r + 1) * n];
                        for kk in 0..*k {
                            let xv =
                                if *trans_a { x[bi * rows * k + kk * rows + r] } else { x[(bi * rows + r) * k + kk] };
                            if xv == 0.0 {
                                continue;
                            }
                            let s = alpha * xv;
                            let wrow = &rhs[kk * n..(kk + 1) * n];
                            for (o, w) in orow.iter_mut().zip(wrow) {
                                *o += s * w;
                            }
                        }
                    }
                }
                out
            }
            Op::Binary { sign, lhs, rhs } => {
                lhs.iter().zip(rhs).map(|(&i, &j)| inputs[0][i] + sign * inputs[1][j]).collect()
            }
            Op::Scale(s) => inputs[0].iter().map(|v| s * v).collect(),
            Op::WindowMean { windows } => {
                windows.iter().map(|w| w.iter().map(|&i| inputs[0][i]).sum::<f64>() / w.len() as f64).collect()
            }
            Op::ChannelAffine { scale, shift, inner } => inputs[0]
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let c = (i / inner) % scale.len();
                    if with_offset {
                        scale[c] * v + shift[c]
                    } else {
                        scale[c] * v
                    }
                })
                .collect(),
            Op::Identity => inputs[0].to_vec(),
            Op::Gather(map) => map.iter().map(|&i| inputs[0][i]).collect(),
            Op::Concat(map) => map.iter().map(|&(k, i)| inputs[k][i]).collect(),
            Op::Relu | Op::LeakyRelu(_) | Op::Abs | Op::Sigmoid | Op::MaxPool { .. } => {
                unreachable!("apply_linear called on a non-linear operator")
            }
        }
    }
}

fn conv2d(g: &ConvGeometry, x: &[f64], with_offset: bool) -> Vec<f64> {
    let cg = g.c_in / g.group;
    let mg = g.c_out / g.group;
    let mut out = vec![0.0; g.batch * g.c_out * g.oh * g.ow];
    for b in 0..g.batch {
        for m in 0..g.c_out {
            let grp = m / mg;
            let base_out = (b * g.c_out + m) * g.oh * g.ow;
            let init = match (&g.bias, with_offset) {
                (Some(bias), true) => bias[m],
                _ => 0.0,
            };
            out[base_out..base_out + g.oh * g.ow].fill(init);
            for ci in 0..cg {
                let c = grp * cg + ci;
                let xin = &x[(b * g.c_in + c) * g.h * g.w..(b * g.c_in + c + 1) * g.h * g.w];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = g.weight[((m * cg + ci) * g.kh + ki) * g.kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let iy = (oy * g.stride.0 + ki * g.dilation.0) as isize - g.pad.0 as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let xrow = &xin[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let orow = &mut out[base_out + oy * g.ow..base_out + (oy + 1) * g.ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * g.stride.1 + kj * g.dilation.1) as isize - g.pad.1 as isize;
                                if ix >= 0 && ix < g.w as isize {
                                    *o += wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_transpose2d(g: &ConvGeometry, x: &[f64], with_offset: bool) -> Vec<f64> {
    let cg = g.c_in / g.group;
    let mg = g.c_out / g.group;
    let mut out = vec![0.0; g.batch * g.c_out * g.oh * g.ow];
    if with_offset {
        if let Some(bias) = &g.bias {
            for b in 0..g.batch {
                for (m, &v) in bias.iter().enumerate().take(g.c_out) {
                    let base = (b * g.c_out + m) * g.oh * g.ow;
                    out[base..base + g.oh * g.ow].fill(v);
                }
            }
        }
    }
    for b in 0..g.batch {
        for c in 0..g.c_in {
            let grp = c / cg;
            for iy in 0..g.h {
                for ix in 0..g.w {
                    let v = x[((b * g.c_in + c) * g.h + iy) * g.w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for mo in 0..mg {
                        let m = grp * mg + mo;
                        for ki in 0..g.kh {
                            let oy = (iy * g.stride.0 + ki * g.dilation.0) as isize - g.pad.0 as isize;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            for kj in 0..g.kw {
                                let ox = (ix * g.stride.1 + kj * g.dilation.1) as isize - g.pad.1 as isize;
                                if ox < 0 || ox >= g.ow as isize {
                                    continue;
                                }
                                let wv = g.weight[(((c * mg) + mo) * g.kh + ki) * g.kw + kj];
                                out[((b * g.c_out + m) * g.oh + oy as usize) * g.ow + ox as usize] += v * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Row-major strides.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn unravel(mut idx: usize, shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        out[d] = idx % shape[d];
        idx /= shape[d];
    }
    out
}

struct Attrs<'a> {
    node: &'a str,
    map: &'a BTreeMap<String, Value>,
}

impl<'a> Attrs<'a> {
    fn bad(&self, key: &str, why: &str) -> Error {
        Error::MalformedDocument(format!("node `{}` attribute `{key}`: {why}", self.node))
    }

    fn ints(&self, key: &str) -> Result<Option<Vec<i64>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_i64()
                        .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
                        .ok_or_else(|| self.bad(key, "expected integers"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.bad(key, "expected an integer list")),
        }
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| self.bad(key, "expected numbers")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.bad(key, "expected a number list")),
        }
    }

    fn int(&self, key: &str, default: i64) -> Result<i64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_i64().ok_or_else(|| self.bad(key, "expected an integer")),
        }
    }

    fn float(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| self.bad(key, "expected a number")),
        }
    }

    fn positive_pair(&self, key: &str, default: usize) -> Result<(usize, usize)> {
        match self.ints(key)? {
            None => Ok((default, default)),
            Some(v) if v.len() == 2 && v.iter().all(|&x| x > 0) => Ok((v[0] as usize, v[1] as usize)),
            Some(_) => Err(self.bad(key, "expected two positive integers")),
        }
    }

    /// ONNX `pads` = [top, left, bottom, right], all non-negative.
    fn pads(&self) -> Result<[usize; 4]> {
        if let Some(Value::String(mode)) = self.map.get("auto_pad") {
            if mode != "NOTSET" {
                return Err(self.bad("auto_pad", "only explicit pads are supported"));
            }
        }
        match self.ints("pads")? {
            None => Ok([0; 4]),
            Some(v) if v.len() == 4 && v.iter().all(|&x| x >= 0) => {
                Ok([v[0] as usize, v[1] as usize, v[2] as usize, v[3] as usize])
            }
            Some(_) => Err(self.bad("pads", "expected four non-negative integers")),
        }
    }
}

struct Compiler<'a> {
    initializers: &'a BTreeMap<String, Tensor>,
    slot_of: HashMap<String, usize>,
    slot_shapes: Vec<Vec<usize>>,
    slot_names: Vec<String>,
}

impl<'a> Compiler<'a> {
    fn operand(&self, node: &NodeSpec, name: &str) -> Result<(Operand, Vec<usize>)> {
        if let Some(&s) = self.slot_of.get(name) {
            Ok((Operand::Slot(s), self.slot_shapes[s].clone()))
        } else if let Some(t) = self.initializers.get(name) {
            Ok((Operand::Const(t.clone()), t.shape().to_vec()))
        } else {
            Err(Error::MalformedDocument(format!("node `{}` reads undefined value `{name}`", node.name)))
        }
    }

    fn weight(&self, node: &NodeSpec, idx: usize) -> Result<Option<&'a Tensor>> {
        match node.inputs.get(idx) {
            None => Ok(None),
            Some(name) if name.is_empty() => Ok(None),
            Some(name) => self.initializers.get(name).map(Some).ok_or_else(|| {
                Error::MalformedDocument(format!("node `{}`: input `{name}` must be an initializer", node.name))
            }),
        }
    }

    fn require_weight(&self, node: &NodeSpec, idx: usize, what: &str) -> Result<&'a Tensor> {
        self.weight(node, idx)?
            .ok_or_else(|| Error::MalformedDocument(format!("node `{}` is missing its {what}", node.name)))
    }
}

pub(crate) fn compile(
    inputs: &[TensorSig],
    outputs: &[TensorSig],
    nodes: &[NodeSpec],
    initializers: &BTreeMap<String, Tensor>,
) -> Result<Plan> {
    let mut c = Compiler { initializers, slot_of: HashMap::new(), slot_shapes: Vec::new(), slot_names: Vec::new() };
    let mut input_slots = Vec::new();
    for sig in inputs {
        let s = c.slot_shapes.len();
        c.slot_of.insert(sig.name.clone(), s);
        c.slot_shapes.push(sig.shape.clone());
        c.slot_names.push(sig.name.clone());
        input_slots.push(s);
    }

    let mut compiled = Vec::with_capacity(nodes.len());
    for node in nodes {
        let (op, operands, shape) = compile_node(&c, node)?;
        if shape.contains(&0) {
            return Err(Error::shape(&node.outputs[0], format!("empty output shape {shape:?}")));
        }
        let s = c.slot_shapes.len();
        c.slot_of.insert(node.outputs[0].clone(), s);
        c.slot_shapes.push(shape);
        c.slot_names.push(node.outputs[0].clone());
        compiled.push(CompiledNode { name: node.name.clone(), op_type: node.op_type, op, inputs: operands, output: s });
    }

    let mut output_slots = Vec::new();
    let mut pre_sigmoid_slots = Vec::new();
    let mut output_sigmoid = Vec::new();
    for sig in outputs {
        let s = *c
            .slot_of
            .get(&sig.name)
            .ok_or_else(|| Error::MalformedDocument(format!("graph output `{}` is never produced", sig.name)))?;
        if c.slot_shapes[s] != sig.shape {
            return Err(Error::shape(&sig.name, format!("declared {:?}, inferred {:?}", sig.shape, c.slot_shapes[s])));
        }
        output_slots.push(s);
        let producer = compiled.iter().find(|n| n.output == s);
        match producer {
            Some(n) if n.op_type == OpType::Sigmoid => {
                let Operand::Slot(pre) = n.inputs[0] else {
                    return Err(Error::MalformedDocument(format!("Sigmoid `{}` applied to a constant", n.name)));
                };
                pre_sigmoid_slots.push(pre);
                output_sigmoid.push(true);
            }
            _ => {
                pre_sigmoid_slots.push(s);
                output_sigmoid.push(false);
            }
        }
    }
    for (sig, &s) in inputs.iter().zip(&input_slots) {
        if output_slots.contains(&s) {
            return Err(Error::MalformedDocument(format!("graph input `{}` is also a graph output", sig.name)));
        }
    }

    let producer_of: HashMap<usize, usize> = compiled.iter().enumerate().map(|(i, n)| (n.output, i)).collect();
    let mut consumers = vec![Vec::new(); compiled.len()];
    for (i, n) in compiled.iter().enumerate() {
        for op in &n.inputs {
            if let Operand::Slot(s) = op {
                if let Some(&p) = producer_of.get(s) {
                    if !consumers[p].contains(&i) {
                        consumers[p].push(i);
                    }
                }
            }
        }
    }

    Ok(Plan {
        slot_shapes: c.slot_shapes,
        slot_names: c.slot_names,
        input_slots,
        output_slots,
        pre_sigmoid_slots,
        output_sigmoid,
        nodes: compiled,
        consumers,
    })
}

fn arity(node: &NodeSpec, min: usize, max: usize) -> Result<()> {
    let n = node.inputs.len();
    if n < min || n > max {
        return Err(Error::MalformedDocument(format!(
            "node `{}` ({}) takes {min}..={max} inputs, got {n}",
            node.name, node.op_type
        )));
    }
    Ok(())
}

fn compile_node(c: &Compiler, node: &NodeSpec) -> Result<(Op, Vec<Operand>, Vec<usize>)> {
    let attrs = Attrs { node: &node.name, map: &node.attrs };
    let edge = node.outputs[0].as_str();
    let mismatch = |detail: String| Error::shape(edge, detail);

    match node.op_type {
        OpType::Conv | OpType::ConvTranspose => {
            arity(node, 2, 3)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            if xs.len() != 4 {
                return Err(mismatch(format!("{} expects NCHW input, got {xs:?}", node.op_type)));
            }
            let w = c.require_weight(node, 1, "weight")?;
            let ws = w.shape();
            if ws.len() != 4 {
                return Err(mismatch(format!("weight must be 4-D, got {ws:?}")));
            }
            let group = attrs.int("group", 1)?;
            if group < 1 {
                return Err(attrs.bad("group", "must be positive"));
            }
            let group = group as usize;
            let (kh, kw) = (ws[2], ws[3]);
            if let Some(k) = attrs.ints("kernel_shape")? {
                if k.len() != 2 || k[0] as usize != kh || k[1] as usize != kw {
                    return Err(mismatch(format!("kernel_shape {k:?} disagrees with weight {ws:?}")));
                }
            }
            let stride = attrs.positive_pair("strides", 1)?;
            let dilation = attrs.positive_pair("dilations", 1)?;
            let pads = attrs.pads()?;
            let (batch, c_in, h, w_in) = (xs[0], xs[1], xs[2], xs[3]);
            let transpose = node.op_type == OpType::ConvTranspose;
            let c_out = if transpose { ws[1] * group } else { ws[0] };
            let weight_cin = if transpose { ws[0] } else { ws[1] * group };
            if weight_cin != c_in || c_in % group != 0 || c_out % group != 0 {
                return Err(mismatch(format!(
                    "input channels {c_in} incompatible with weight {ws:?} and group {group}"
                )));
            }
            let eff_h = (kh - 1) * dilation.0 + 1;
            let eff_w = (kw - 1) * dilation.1 + 1;
            let (oh, ow) = if transpose {
                let op = attrs.ints("output_padding")?.unwrap_or_else(|| vec![0, 0]);
                if op.len() != 2 || op.iter().any(|&v| v < 0) {
                    return Err(attrs.bad("output_padding", "expected two non-negative integers"));
                }
                let oh = (stride.0 * (h - 1) + op[0] as usize + eff_h) as isize - (pads[0] + pads[2]) as isize;
                let ow = (stride.1 * (w_in - 1) + op[1] as usize + eff_w) as isize - (pads[1] + pads[3]) as isize;
                if oh <= 0 || ow <= 0 {
                    return Err(mismatch("non-positive output size".into()));
                }
                (oh as usize, ow as usize)
            } else {
                let ph = h + pads[0] + pads[2];
                let pw = w_in + pads[1] + pads[3];
                if ph < eff_h || pw < eff_w {
                    return Err(mismatch(format!("kernel {kh}x{kw} larger than padded input")));
                }
                ((ph - eff_h) / stride.0 + 1, (pw - eff_w) / stride.1 + 1)
            };
            let bias = match c.weight(node, 2)? {
                Some(b) if b.len() == c_out => Some(b.data().to_vec()),
                Some(b) => return Err(mismatch(format!("bias has {} values, need {c_out}", b.len()))),
                None => None,
            };
            let geom = Box::new(ConvGeometry {
                batch,
                c_in,
                h,
                w: w_in,
                c_out,
                oh,
                ow,
                kh,
                kw,
                stride,
                pad: (pads[0], pads[1]),
                dilation,
                group,
                weight: w.data().to_vec(),
                bias,
            });
            let op = if transpose { Op::ConvTranspose(geom) } else { Op::Conv(geom) };
            Ok((op, vec![x], vec![batch, c_out, oh, ow]))
        }

        OpType::Gemm => {
            arity(node, 2, 3)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            if xs.len() != 2 {
                return Err(mismatch(format!("Gemm expects a 2-D input, got {xs:?}")));
            }
            let trans_a = attrs.int("transA", 0)? != 0;
            let trans_b = attrs.int("transB", 0)? != 0;
            let alpha = attrs.float("alpha", 1.0)?;
            let beta = attrs.float("beta", 1.0)?;
            let (m, k) = if trans_a { (xs[1], xs[0]) } else { (xs[0], xs[1]) };
            let b = c.require_weight(node, 1, "B matrix")?;
            let bs = b.shape();
            if bs.len() != 2 {
                return Err(mismatch(format!("B must be 2-D, got {bs:?}")));
            }
            let (bk, n) = if trans_b { (bs[1], bs[0]) } else { (bs[0], bs[1]) };
            if bk != k {
                return Err(mismatch(format!("inner dimensions {k} and {bk} differ")));
            }
            let rhs = if trans_b {
                let mut r = vec![0.0; k * n];
                for j in 0..n {
                    for kk in 0..k {
                        r[kk * n + j] = b.data()[j * k + kk];
                    }
                }
                r
            } else {
                b.data().to_vec()
            };
            let offset = match c.weight(node, 2)? {
                None => None,
                Some(ct) => {
                    let map = broadcast_map(ct.shape(), &[m, n])
                        .ok_or_else(|| mismatch(format!("C {:?} does not broadcast to [{m}, {n}]", ct.shape())))?;
                    Some(map.into_iter().map(|i| beta * ct.data()[i]).collect())
                }
            };
            let op = Op::Dense { rows: m, k, n, trans_a, alpha, rhs, offset };
            Ok((op, vec![x], vec![m, n]))
        }

        OpType::MatMul => {
            arity(node, 2, 2)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            let b = c.require_weight(node, 1, "right-hand matrix")?;
            let bs = b.shape();
            if bs.len() != 2 || xs.is_empty() || *xs.last().unwrap() != bs[0] {
                return Err(mismatch(format!("cannot multiply {xs:?} by {bs:?}")));
            }
            let (k, n) = (bs[0], bs[1]);
            let mut out_shape = xs.clone();
            *out_shape.last_mut().unwrap() = n;
            let rows = if xs.len() == 1 { 1 } else { xs[xs.len() - 2] };
            let op = Op::Dense { rows, k, n, trans_a: false, alpha: 1.0, rhs: b.data().to_vec(), offset: None };
            Ok((op, vec![x], out_shape))
        }

        OpType::Add | OpType::Sub => {
            arity(node, 2, 2)?;
            let (l, ls) = c.operand(node, &node.inputs[0])?;
            let (r, rs) = c.operand(node, &node.inputs[1])?;
            let out =
                broadcast_shape(&ls, &rs).ok_or_else(|| mismatch(format!("cannot broadcast {ls:?} with {rs:?}")))?;
            let op = Op::Binary {
                sign: if node.op_type == OpType::Add { 1.0 } else { -1.0 },
                lhs: broadcast_map(&ls, &out).unwrap(),
                rhs: broadcast_map(&rs, &out).unwrap(),
            };
            Ok((op, vec![l, r], out))
        }

        OpType::Neg | OpType::MulScalar | OpType::Relu | OpType::LeakyRelu | OpType::Abs | OpType::Sigmoid => {
            arity(node, 1, 1)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            let op = match node.op_type {
                OpType::Neg => Op::Scale(-1.0),
                OpType::MulScalar => {
                    let v = attrs
                        .map
                        .get("value")
                        .and_then(Value::as_f64)
                        .ok_or_else(|| attrs.bad("value", "required number"))?;
                    Op::Scale(v)
                }
                OpType::Relu => Op::Relu,
                OpType::LeakyRelu => Op::LeakyRelu(attrs.float("alpha", 0.01)?),
                OpType::Abs => Op::Abs,
                _ => Op::Sigmoid,
            };
            Ok((op, vec![x], xs))
        }

        OpType::MaxPool | OpType::AveragePool => {
            arity(node, 1, 1)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            if xs.len() != 4 {
                return Err(mismatch(format!("pooling expects NCHW input, got {xs:?}")));
            }
            let kernel = match attrs.ints("kernel_shape")? {
                Some(k) if k.len() == 2 && k.iter().all(|&v| v > 0) => (k[0] as usize, k[1] as usize),
                _ => return Err(attrs.bad("kernel_shape", "two positive integers required")),
            };
            if attrs.int("ceil_mode", 0)? != 0 {
                return Err(attrs.bad("ceil_mode", "only floor mode is supported"));
            }
            let stride = attrs.positive_pair("strides", 1)?;
            let dilation = attrs.positive_pair("dilations", 1)?;
            let pads = attrs.pads()?;
            let include_pad = attrs.int("count_include_pad", 0)? != 0;
            if include_pad && node.op_type == OpType::AveragePool && pads.iter().any(|&p| p > 0) {
                return Err(attrs.bad("count_include_pad", "padded averaging is not supported"));
            }
            let (windows, shape) = pool_windows(&xs, kernel, stride, dilation, pads)
                .ok_or_else(|| mismatch("pooling window larger than padded input".into()))?;
            if windows.iter().any(Vec::is_empty) {
                return Err(mismatch("pooling window lies entirely in padding".into()));
            }
            let op = if node.op_type == OpType::MaxPool { Op::MaxPool { windows } } else { Op::WindowMean { windows } };
            Ok((op, vec![x], shape))
        }

        OpType::GlobalAveragePool => {
            arity(node, 1, 1)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            if xs.len() < 3 {
                return Err(mismatch(format!("GlobalAveragePool expects N,C,spatial.., got {xs:?}")));
            }
            let spatial: usize = xs[2..].iter().product();
            let windows = (0..xs[0] * xs[1]).map(|p| (p * spatial..(p + 1) * spatial).collect()).collect();
            let mut shape = vec![xs[0], xs[1]];
            shape.extend(std::iter::repeat_n(1, xs.len() - 2));
            Ok((Op::WindowMean { windows }, vec![x], shape))
        }

        OpType::BatchNormalization => {
            arity(node, 5, 5)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            if xs.len() < 2 {
                return Err(mismatch(format!("BatchNormalization needs a channel axis, got {xs:?}")));
            }
            let channels = xs[1];
            let params: Vec<&Tensor> =
                (1..5).map(|i| c.require_weight(node, i, "batch-norm parameter")).collect::<Result<_>>()?;
            if params.iter().any(|t| t.len() != channels) {
                return Err(mismatch(format!("batch-norm parameters must have {channels} values")));
            }
            let eps = attrs.float("epsilon", 1e-5)?;
            let (gamma, beta, mean, var) = (params[0], params[1], params[2], params[3]);
            let mut scale = Vec::with_capacity(channels);
            let mut shift = Vec::with_capacity(channels);
            for ch in 0..channels {
                let v = var.data()[ch] + eps;
                if v <= 0.0 {
                    return Err(mismatch("batch-norm variance plus epsilon is not positive".into()));
                }
                let s = gamma.data()[ch] / v.sqrt();
                scale.push(s);
                shift.push(beta.data()[ch] - s * mean.data()[ch]);
            }
            let inner = xs[2..].iter().product();
            Ok((Op::ChannelAffine { scale, shift, inner }, vec![x], xs))
        }

        OpType::Flatten => {
            arity(node, 1, 1)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            let axis =
                normalize_axis(attrs.int("axis", 1)?, xs.len() + 1).ok_or_else(|| attrs.bad("axis", "out of range"))?;
            let outer: usize = xs[..axis].iter().product();
            let inner: usize = xs[axis..].iter().product();
            Ok((Op::Identity, vec![x], vec![outer, inner]))
        }

        OpType::Reshape => {
            arity(node, 1, 2)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            let target: Vec<i64> = match c.weight(node, 1)? {
                Some(t) => t.data().iter().map(|&v| v as i64).collect(),
                None => {
                    attrs.ints("shape")?.ok_or_else(|| attrs.bad("shape", "required when no shape input is given"))?
                }
            };
            let shape = resolve_reshape(&xs, &target)
                .ok_or_else(|| mismatch(format!("cannot reshape {xs:?} to {target:?}")))?;
            Ok((Op::Identity, vec![x], shape))
        }

        OpType::Transpose => {
            arity(node, 1, 1)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            let perm: Vec<usize> = match attrs.ints("perm")? {
                Some(p) => p.into_iter().map(|v| v as usize).collect(),
                None => (0..xs.len()).rev().collect(),
            };
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..xs.len()).collect::<Vec<_>>() {
                return Err(attrs.bad("perm", "not a permutation of the input axes"));
            }
            let out: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
            let in_strides = strides(&xs);
            let total: usize = out.iter().product();
            let map = (0..total)
                .map(|o| {
                    let idx = unravel(o, &out);
                    idx.iter().zip(&perm).map(|(&i, &p)| i * in_strides[p]).sum()
                })
                .collect();
            Ok((Op::Gather(map), vec![x], out))
        }

        OpType::Concat => {
            if node.inputs.is_empty() {
                return Err(Error::MalformedDocument(format!("Concat `{}` has no inputs", node.name)));
            }
            let mut operands = Vec::new();
            let mut shapes = Vec::new();
            for name in &node.inputs {
                let (o, s) = c.operand(node, name)?;
                operands.push(o);
                shapes.push(s);
            }
            let rank = shapes[0].len();
            let axis = normalize_axis(
                attrs.map.get("axis").and_then(Value::as_i64).ok_or_else(|| attrs.bad("axis", "required integer"))?,
                rank,
            )
            .ok_or_else(|| attrs.bad("axis", "out of range"))?;
            for s in &shapes {
                if s.len() != rank || s.iter().enumerate().any(|(d, &v)| d != axis && v != shapes[0][d]) {
                    return Err(mismatch(format!("Concat inputs {shapes:?} disagree off axis {axis}")));
                }
            }
            let mut out = shapes[0].clone();
            out[axis] = shapes.iter().map(|s| s[axis]).sum();
            let outer: usize = out[..axis].iter().product();
            let inner: usize = out[axis + 1..].iter().product();
            let mut map = Vec::with_capacity(out.iter().product());
            for o in 0..outer {
                for (k, s) in shapes.iter().enumerate() {
                    let block = s[axis] * inner;
                    for i in 0..block {
                        map.push((k, o * block + i));
                    }
                }
            }
            Ok((Op::Concat(map), operands, out))
        }

        OpType::Slice => {
            arity(node, 1, 5)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            let list = |idx: usize, key: &str| -> Result<Option<Vec<i64>>> {
                match c.weight(node, idx)? {
                    Some(t) => Ok(Some(t.data().iter().map(|&v| v as i64).collect())),
                    None => attrs.ints(key),
                }
            };
            let starts = list(1, "starts")?.ok_or_else(|| attrs.bad("starts", "required"))?;
            let ends = list(2, "ends")?.ok_or_else(|| attrs.bad("ends", "required"))?;
            let axes = list(3, "axes")?.unwrap_or_else(|| (0..starts.len() as i64).collect());
            let steps = list(4, "steps")?.unwrap_or_else(|| vec![1; starts.len()]);
            if ends.len() != starts.len() || axes.len() != starts.len() || steps.len() != starts.len() {
                return Err(mismatch("starts/ends/axes/steps lengths differ".into()));
            }
            // Per-axis (start, step, count).
            let mut spec: Vec<(i64, i64, usize)> = xs.iter().map(|&d| (0, 1, d)).collect();
            for i in 0..starts.len() {
                let ax = normalize_axis(axes[i], xs.len()).ok_or_else(|| attrs.bad("axes", "out of range"))?;
                let dim = xs[ax] as i64;
                let step = steps[i];
                if step == 0 {
                    return Err(attrs.bad("steps", "step must be non-zero"));
                }
                let fix = |v: i64| if v < 0 { v + dim } else { v };
                let (start, end) = if step > 0 {
                    (fix(starts[i]).clamp(0, dim), fix(ends[i]).clamp(0, dim))
                } else {
                    (fix(starts[i]).clamp(0, dim - 1), fix(ends[i]).clamp(-1, dim - 1))
                };
                let count = if step > 0 {
                    ((end - start).max(0) + step - 1) / step
                } else {
                    ((start - end).max(0) + (-step) - 1) / (-step)
                };
                spec[ax] = (start, step, count as usize);
            }
            let out: Vec<usize> = spec.iter().map(|s| s.2).collect();
            let in_strides = strides(&xs);
            let total: usize = out.iter().product();
            let map = (0..total)
                .map(|o| {
                    unravel(o, &out)
                        .iter()
                        .zip(&spec)
                        .zip(&in_strides)
                        .map(|((&i, &(start, step, _)), &st)| (start + step * i as i64) as usize * st)
                        .sum()
                })
                .collect();
            Ok((Op::Gather(map), vec![x], out))
        }

        OpType::UpsampleNearest => {
            arity(node, 1, 1)?;
            let (x, xs) = c.operand(node, &node.inputs[0])?;
            if xs.len() != 4 {
                return Err(mismatch(format!("UpsampleNearest expects NCHW, got {xs:?}")));
            }
            let scales = attrs.floats("scales")?.ok_or_else(|| attrs.bad("scales", "required"))?;
            let hw = match scales.as_slice() {
                [sh, sw] => [*sh, *sw],
                [sn, sc, sh, sw] if *sn == 1.0 && *sc == 1.0 => [*sh, *sw],
                _ => return Err(attrs.bad("scales", "expected [h, w] or [1, 1, h, w]")),
            };
            if hw.iter().any(|s| *s < 1.0 || s.fract() != 0.0) {
                return Err(attrs.bad("scales", "spatial scales must be positive integers"));
            }
            let (sh, sw) = (hw[0] as usize, hw[1] as usize);
            let out = vec![xs[0], xs[1], xs[2] * sh, xs[3] * sw];
            let mut map = Vec::with_capacity(out.iter().product());
            for p in 0..xs[0] * xs[1] {
                for oy in 0..out[2] {
                    for ox in 0..out[3] {
                        map.push((p * xs[2] + oy / sh) * xs[3] + ox / sw);
                    }
                }
            }
            Ok((Op::Gather(map), vec![x], out))
        }
    }
}

fn normalize_axis(axis: i64, rank: usize) -> Option<usize> {
    let a = if axis < 0 { axis + rank as i64 } else { axis };
    (0..rank as i64).contains(&a).then_some(a as usize)
}

fn resolve_reshape(input: &[usize], target: &[i64]) -> Option<Vec<usize>> {
    let total: usize = input.iter().product();
    let mut out = Vec::with_capacity(target.len());
    let mut infer = None;
    for (i, &t) in target.iter().enumerate() {
        match t {
            0 => out.push(*input.get(i)?),
            -1 if infer.is_none() => {
                infer = Some(i);
                out.push(1);
            }
            t if t > 0 => out.push(t as usize),
            _ => return None,
        }
    }
    let known: usize = out.iter().product();
    if let Some(i) = infer {
        if known == 0 || !total.is_multiple_of(known) {
            return None;
        }
        out[i] = total / known;
    }
    (out.iter().product::<usize>() == total).then_some(out)
}

/// Numpy-style broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out`, the flat index of the `src` element it reads
/// under broadcasting.
fn broadcast_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src.len() > out.len() {
        return None;
    }
    let offset = out.len() - src.len();
    let src_strides = strides(src);
    for (i, &d) in src.iter().enumerate() {
        if d != 1 && d != out[i + offset] {
            return None;
        }
    }
    let total: usize = out.iter().product();
    Some(
        (0..total)
            .map(|o| {
                unravel(o, out)
                    .iter()
                    .skip(offset)
                    .zip(src)
                    .zip(&src_strides)
                    .map(|((&i, &d), &s)| if d == 1 { 0 } else { i * s })
                    .sum()
            })
            .collect(),
    )
}

/// Index windows of a 2-D pooling over an NCHW tensor; padded positions are
/// simply absent from the window.
fn pool_windows(
    xs: &[usize],
    kernel: (usize, usize),
    stride: (usize, usize),
    dilation: (usize, usize),
    pads: [usize; 4],
) -> Option<(Vec<Vec<usize>>, Vec<usize>)> {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let eff_h = (kernel.0 - 1) * dilation.0 + 1;
    let eff_w = (kernel.1 - 1) * dilation.1 + 1;
    let ph = h + pads[0] + pads[2];
    let pw = w + pads[1] + pads[3];
    if ph < eff_h || pw < eff_w {
        return None;
    }
    let oh = (ph - eff_h) / stride.0 + 1;
    let ow = (pw - eff_w) / stride.1 + 1;
    let mut windows = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut win = Vec::with_capacity(kernel.0 * kernel.1);
                for ki in 0..kernel.0 {
                    let iy = (oy * stride.0 + ki * dilation.0) as isize - pads[0] as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..kernel.1 {
                        let ix = (ox * stride.1 + kj * dilation.1) as isize - pads[1] as isize;
                        if ix >= 0 && ix < w as isize {
                            win.push((p * h + iy as usize) * w + ix as usize);
                        }
                    }
                }
                windows.push(win);
            }
        }
    }
    Some((windows, vec![n, c, oh, ow]))
}
