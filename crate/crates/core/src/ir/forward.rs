//! Plain (non-parametric) evaluation of a graph.

use super::ops::{Op, Operand, Plan};
use super::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl ModelGraph {
    /// Standard forward pass. Inputs must match the declared signatures.
    pub fn forward(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let values = self.evaluate(inputs)?;
        Ok(self.plan().output_slots.iter().map(|&s| values[s].clone().expect("outputs are always computed")).collect())
    }

    /// Forward pass that returns, for each graph output, the value feeding a
    /// terminal Sigmoid when there is one (the pre-activation score), and the
    /// output itself otherwise.
    pub fn forward_pre_sigmoid(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let values = self.evaluate(inputs)?;
        Ok(self
            .plan()
            .pre_sigmoid_slots
            .iter()
            .map(|&s| values[s].clone().expect("outputs are always computed"))
            .collect())
    }

    /// Piece signature of the input: for every Relu/LeakyRelu/Abs element
    /// whether it is strictly positive, and for every MaxPool output the
    /// position of the (first) maximum inside its window.
    pub fn piece_signature(&self, inputs: &[Tensor]) -> Result<Vec<u32>> {
        let plan = self.plan();
        let values = self.evaluate(inputs)?;
        let mut sig = Vec::new();
        for node in &plan.nodes {
            let input = match &node.inputs[0] {
                Operand::Slot(s) => values[*s].as_ref().unwrap(),
                Operand::Const(t) => t,
            };
            match &node.op {
                Op::Relu | Op::LeakyRelu(_) | Op::Abs => sig.extend(input.data().iter().map(|&v| u32::from(v > 0.0))),
                Op::MaxPool { windows } => {
                    for w in windows {
                        let mut best = 0;
                        for (k, &i) in w.iter().enumerate() {
                            if input.data()[i] > input.data()[w[best]] {
                                best = k;
                            }
                        }
                        sig.push(best as u32);
                    }
                }
                _ => {}
            }
        }
        Ok(sig)
    }

    fn evaluate(&self, inputs: &[Tensor]) -> Result<Vec<Option<Tensor>>> {
        let plan = self.plan();
        check_inputs(self, inputs)?;
        let mut values: Vec<Option<Tensor>> = vec![None; plan.slot_shapes.len()];
        for (&slot, t) in plan.input_slots.iter().zip(inputs) {
            values[slot] = Some(t.clone());
        }
        for node in &plan.nodes {
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|o| match o {
                    Operand::Slot(s) => values[*s].as_ref().expect("topological order"),
                    Operand::Const(t) => t,
                })
                .collect();
            let shape = plan.slot_shapes[node.output].clone();
            let out = eval_plain(&node.op, &args, &shape);
            let t = Tensor::new(shape, out).expect("compiled shapes are consistent");
            if !t.is_finite() {
                return Err(Error::NonFiniteActivation(node.name.clone()));
            }
            values[node.output] = Some(t);
        }
        Ok(values)
    }
}

pub(crate) fn check_inputs(graph: &ModelGraph, inputs: &[Tensor]) -> Result<()> {
    if inputs.len() != graph.inputs().len() {
        return Err(Error::shape(
            "inputs",
            format!("graph takes {} inputs, got {}", graph.inputs().len(), inputs.len()),
        ));
    }
    for (sig, t) in graph.inputs().iter().zip(inputs) {
        if t.shape() != sig.shape.as_slice() {
            return Err(Error::shape(&sig.name, format!("declared {:?}, got {:?}", sig.shape, t.shape())));
        }
    }
    Ok(())
}

fn eval_plain(op: &Op, args: &[&Tensor], out_shape: &[usize]) -> Vec<f64> {
    let out_len = out_shape.iter().product();
    match op {
        Op::Relu => args[0].data().iter().map(|&v| v.max(0.0)).collect(),
        Op::LeakyRelu(alpha) => args[0].data().iter().map(|&v| if v > 0.0 { v } else { alpha * v }).collect(),
        Op::Abs => args[0].data().iter().map(|v| v.abs()).collect(),
        Op::Sigmoid => args[0].data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        Op::MaxPool { windows } => {
            windows.iter().map(|w| w.iter().map(|&i| args[0].data()[i]).fold(f64::NEG_INFINITY, f64::max)).collect()
        }
        linear => {
            let data: Vec<&[f64]> = args.iter().map(|t| t.data()).collect();
            linear.apply_linear(&data, out_len, true)
        }
    }
}

#[allow(dead_code)]
fn _assert_plan_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<Plan>();
    check::<ModelGraph>();
}
