use serde::Serialize;

use super::pieces::{abs_piece, leaky_relu_piece, max_piece, relu_piece};
use super::ParamTensor;
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::ir::{CompiledNode, ModelGraph, Op, Operand};
use crate::tensor::Tensor;

/// Counters accumulated over the lifetime of a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SessionStats {
    pub propagations: u64,
    pub node_evaluations: u64,
    pub cache_hits: u64,
}

/// Result of one propagation: every graph output as an affine tensor, and the
/// interval on which all of them are exact.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub outputs: Vec<ParamTensor>,
    pub valid: Interval,
}

#[derive(Debug, Clone)]
struct CacheEntry {
    value: ParamTensor,
    /// Intersection of this node's own pieces with those of its ancestors.
    valid: Interval,
}

/// Propagation state bound to one input line of one graph.
///
/// With memoization on, a node's affine output is reused for any later `z`
/// lying strictly inside its validity interval; a node is recomputed only
/// when it, or one of its ancestors, has left its piece.
pub struct PropagationSession<'g> {
    graph: &'g ModelGraph,
    inputs: Vec<ParamTensor>,
    memoize: bool,
    cache: Vec<Option<CacheEntry>>,
    stats: SessionStats,
}

impl<'g> PropagationSession<'g> {
    /// Binds the session to one affine family per graph input. Inputs that do
    /// not move along the line can be given as [`ParamTensor::constant`].
    pub fn new(graph: &'g ModelGraph, inputs: Vec<ParamTensor>, memoize: bool) -> Result<Self> {
        if inputs.len() != graph.inputs().len() {
            return Err(Error::shape(
                "inputs",
                format!("graph takes {} inputs, got {}", graph.inputs().len(), inputs.len()),
            ));
        }
        for (sig, p) in graph.inputs().iter().zip(&inputs) {
            if p.shape() != sig.shape.as_slice() {
                return Err(Error::shape(&sig.name, format!("declared {:?}, got {:?}", sig.shape, p.shape())));
            }
        }
        Ok(PropagationSession {
            graph,
            inputs,
            memoize,
            cache: vec![None; graph.plan().nodes.len()],
            stats: SessionStats::default(),
        })
    }

    pub fn graph(&self) -> &'g ModelGraph {
        self.graph
    }

    pub fn inputs(&self) -> &[ParamTensor] {
        &self.inputs
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn memoize(&self) -> bool {
        self.memoize
    }

    /// Drops every cached node whose validity interval does not strictly
    /// contain `z_new`, together with all of its descendants.
    pub fn advance(&mut self, z_new: f64) {
        let plan = self.graph.plan();
        let mut stale = vec![false; self.cache.len()];
        for i in 0..self.cache.len() {
            let keep = matches!(&self.cache[i], Some(e) if e.valid.contains_strictly(z_new));
            if !keep || stale[i] {
                stale[i] = true;
                self.cache[i] = None;
                for &c in &plan.consumers[i] {
                    stale[c] = true;
                }
            }
        }
    }

    /// Affine outputs at `z` and the interval on which they are exact.
    ///
    /// Terminal Sigmoid nodes pass their input through unchanged; callers
    /// threshold the pre-activation instead.
    pub fn propagate(&mut self, z: f64) -> Result<Propagation> {
        if !z.is_finite() {
            return Err(Error::InternalInconsistency(format!("propagate at non-finite z = {z}")));
        }
        self.stats.propagations += 1;
        if self.memoize {
            self.advance(z);
        } else {
            self.cache.iter_mut().for_each(|e| *e = None);
        }

        let plan = self.graph.plan();
        let mut slot_node = vec![usize::MAX; plan.slot_shapes.len()];
        for (i, n) in plan.nodes.iter().enumerate() {
            slot_node[n.output] = i;
        }

        for (i, node) in plan.nodes.iter().enumerate() {
            if self.cache[i].is_some() {
                self.stats.cache_hits += 1;
                continue;
            }
            let entry = self.eval_node(node, &slot_node, z)?;
            self.stats.node_evaluations += 1;
            self.cache[i] = Some(entry);
        }

        let mut valid = Interval::REAL_LINE;
        for e in self.cache.iter().flatten() {
            valid = valid
                .intersect(&e.valid)
                .ok_or_else(|| Error::InternalInconsistency("node validity intervals do not overlap".into()))?;
        }
        valid.check_contains(z, "propagation")?;

        let outputs = plan.output_slots.iter().map(|&s| self.slot_value(s, &slot_node).0.clone()).collect();
        Ok(Propagation { outputs, valid })
    }

    fn slot_value(&self, slot: usize, slot_node: &[usize]) -> (&ParamTensor, Interval) {
        let plan = self.graph.plan();
        if let Some(k) = plan.input_slots.iter().position(|&s| s == slot) {
            return (&self.inputs[k], Interval::REAL_LINE);
        }
        let e = self.cache[slot_node[slot]].as_ref().expect("producers are evaluated before consumers");
        (&e.value, e.valid)
    }

    fn eval_node(&self, node: &CompiledNode, slot_node: &[usize], z: f64) -> Result<CacheEntry> {
        let plan = self.graph.plan();
        let shape = plan.slot_shapes[node.output].clone();
        let out_len: usize = shape.iter().product();

        let mut valid = Interval::REAL_LINE;
        let mut zeros: Vec<Tensor> = Vec::new();
        let mut args: Vec<(&Tensor, &Tensor)> = Vec::with_capacity(node.inputs.len());
        for operand in &node.inputs {
            if let Operand::Const(t) = operand {
                zeros.push(Tensor::zeros(t.shape().to_vec()));
            }
        }
        let mut zi = 0;
        for operand in &node.inputs {
            match operand {
                Operand::Slot(s) => {
                    let (p, iv) = self.slot_value(*s, slot_node);
                    valid = valid.intersect(&iv).ok_or_else(|| {
                        Error::InternalInconsistency(format!("inputs of `{}` have disjoint validity", node.name))
                    })?;
                    args.push((p.bias(), p.coeff()));
                }
                Operand::Const(t) => {
                    args.push((t, &zeros[zi]));
                    zi += 1;
                }
            }
        }

        let (bias, coeff) = match &node.op {
            Op::Relu | Op::LeakyRelu(_) | Op::Abs => {
                let (a_in, b_in) = (args[0].0.data(), args[0].1.data());
                let mut bias = Vec::with_capacity(out_len);
                let mut coeff = Vec::with_capacity(out_len);
                for (&a, &b) in a_in.iter().zip(b_in) {
                    let (a2, b2, iv) = match node.op {
                        Op::Relu => relu_piece(a, b, valid, z),
                        Op::LeakyRelu(alpha) => leaky_relu_piece(a, b, alpha, valid, z),
                        _ => abs_piece(a, b, valid, z),
                    };
                    valid = iv;
                    bias.push(a2);
                    coeff.push(b2);
                }
                (bias, coeff)
            }
            Op::MaxPool { windows } => {
                let (a_in, b_in) = (args[0].0.data(), args[0].1.data());
                let mut bias = Vec::with_capacity(out_len);
                let mut coeff = Vec::with_capacity(out_len);
                let mut cands = Vec::new();
                for w in windows {
                    cands.clear();
                    cands.extend(w.iter().map(|&i| (a_in[i], b_in[i])));
                    let (a2, b2, iv) = max_piece(&cands, valid, z);
                    valid = iv;
                    bias.push(a2);
                    coeff.push(b2);
                }
                (bias, coeff)
            }
            Op::Sigmoid => (args[0].0.data().to_vec(), args[0].1.data().to_vec()),
            linear => {
                let biases: Vec<&[f64]> = args.iter().map(|(a, _)| a.data()).collect();
                let coeffs: Vec<&[f64]> = args.iter().map(|(_, b)| b.data()).collect();
                (linear.apply_linear(&biases, out_len, true), linear.apply_linear(&coeffs, out_len, false))
            }
        };

        if valid.lo > valid.hi {
            return Err(Error::InternalInconsistency(format!("empty piece interval at node `{}`", node.name)));
        }
        valid.check_contains(z, &node.name)?;
        let value = ParamTensor::from_parts(shape, bias, coeff);
        if !value.is_finite() {
            return Err(Error::NonFiniteActivation(node.name.clone()));
        }
        Ok(CacheEntry { value, valid })
    }
}

/// One-shot propagation of the line `a + b z` through a single-input graph.
pub fn propagate(graph: &ModelGraph, a: &Tensor, b: &Tensor, z: f64) -> Result<Propagation> {
    let input = ParamTensor::new(a.clone(), b.clone())?;
    PropagationSession::new(graph, vec![input], false)?.propagate(z)
}
