//! Programmatic graph construction.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::doc::build_graph;
use super::ops::compile;
use super::{ModelGraph, NodeSpec, OpType, TensorSig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Builds a [`ModelGraph`] node by node; output shapes are inferred.
///
/// ```
/// use siglass::ir::{GraphBuilder, OpType};
/// use siglass::Tensor;
///
/// let mut g = GraphBuilder::new();
/// let x = g.input("x", vec![1, 4]);
/// let y = g.node(OpType::Relu, &[&x], serde_json::json!({}));
/// let graph = g.build(&[&y]).unwrap();
/// let out = graph.forward(&[Tensor::new(vec![1, 4], vec![-1.0, 0.0, 2.0, 3.0]).unwrap()]).unwrap();
/// assert_eq!(out[0].data(), &[0.0, 0.0, 2.0, 3.0]);
/// ```
#[derive(Debug, Default)]
pub struct GraphBuilder {
    inputs: Vec<TensorSig>,
    nodes: Vec<NodeSpec>,
    initializers: BTreeMap<String, Tensor>,
    counter: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, name: &str, shape: Vec<usize>) -> String {
        self.inputs.push(TensorSig { name: name.to_string(), shape });
        name.to_string()
    }

    pub fn constant(&mut self, prefix: &str, t: Tensor) -> String {
        let name = self.fresh(prefix);
        self.initializers.insert(name.clone(), t);
        name
    }

    /// Appends a node and returns the name of its output.
    pub fn node(&mut self, op: OpType, inputs: &[&str], attrs: Value) -> String {
        let name = self.fresh(&op.name().to_lowercase());
        let out = format!("{name}_out");
        let attrs = match attrs {
            Value::Object(map) => map.into_iter().collect(),
            _ => BTreeMap::new(),
        };
        self.nodes.push(NodeSpec {
            name,
            op_type: op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: vec![out.clone()],
            attrs,
        });
        out
    }

    /// 2-D convolution with stride 1 and symmetric zero padding.
    pub fn conv2d(&mut self, x: &str, weight: Tensor, bias: Option<Tensor>, pad: usize) -> String {
        let w = self.constant("w", weight);
        let mut inputs = vec![w];
        if let Some(b) = bias {
            inputs.push(self.constant("b", b));
        }
        let refs: Vec<&str> = std::iter::once(x).chain(inputs.iter().map(String::as_str)).collect();
        self.node(OpType::Conv, &refs, json!({ "pads": [pad, pad, pad, pad] }))
    }

    pub fn relu(&mut self, x: &str) -> String {
        self.node(OpType::Relu, &[x], json!({}))
    }

    pub fn max_pool(&mut self, x: &str, kernel: usize, stride: usize) -> String {
        self.node(OpType::MaxPool, &[x], json!({ "kernel_shape": [kernel, kernel], "strides": [stride, stride] }))
    }

    pub fn build(self, outputs: &[&str]) -> Result<ModelGraph> {
        let plan = compile(&self.inputs, &[], &self.nodes, &self.initializers)?;
        let outputs = outputs
            .iter()
            .map(|name| {
                plan.slot_names
                    .iter()
                    .position(|s| s == name)
                    .map(|i| TensorSig { name: name.to_string(), shape: plan.slot_shapes[i].clone() })
                    .ok_or_else(|| Error::MalformedDocument(format!("unknown output `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        build_graph(self.inputs, outputs, self.nodes, self.initializers)
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{}", self.counter)
    }
}
