//! JSON document schema, loading and validation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ops::compile;
use super::{ModelGraph, NodeSpec, OpType, TensorSig};
use crate::error::{Error, Result};
use crate::tensor::TensorDoc;

pub const IR_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
struct RawDocument {
    ir_version: u32,
    inputs: Vec<TensorSig>,
    outputs: Vec<TensorSig>,
    #[serde(default)]
    initializers: Vec<TensorDoc>,
    nodes: Vec<RawNode>,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    name: String,
    op_type: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(default)]
    attrs: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize)]
struct OutDocument<'a> {
    ir_version: u32,
    inputs: &'a [TensorSig],
    outputs: &'a [TensorSig],
    initializers: Vec<TensorDoc>,
    nodes: &'a [NodeSpec],
}

/// Loads and validates a model document.
pub fn parse_model(bytes: &[u8]) -> Result<ModelGraph> {
    let raw: RawDocument = serde_json::from_slice(bytes).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    if raw.ir_version != IR_VERSION {
        return Err(Error::MalformedDocument(format!(
            "unsupported ir_version {} (expected {IR_VERSION})",
            raw.ir_version
        )));
    }

    let unsupported: Vec<String> = raw
        .nodes
        .iter()
        .filter(|n| OpType::from_name(&n.op_type).is_none())
        .map(|n| format!("{} ({})", n.name, n.op_type))
        .collect();
    if !unsupported.is_empty() {
        return Err(Error::UnsupportedOperator(unsupported));
    }
    let nodes: Vec<NodeSpec> = raw
        .nodes
        .into_iter()
        .map(|n| NodeSpec {
            op_type: OpType::from_name(&n.op_type).unwrap(),
            name: n.name,
            inputs: n.inputs,
            outputs: n.outputs,
            attrs: n.attrs,
        })
        .collect();

    let mut initializers = BTreeMap::new();
    for (i, doc) in raw.initializers.into_iter().enumerate() {
        let name = doc.name.clone().ok_or_else(|| Error::MalformedDocument(format!("initializer #{i} has no name")))?;
        let t = doc.into_tensor(&name)?;
        if initializers.insert(name.clone(), t).is_some() {
            return Err(Error::MalformedDocument(format!("duplicate initializer `{name}`")));
        }
    }

    build_graph(raw.inputs, raw.outputs, nodes, initializers)
}

pub(crate) fn build_graph(
    inputs: Vec<TensorSig>,
    outputs: Vec<TensorSig>,
    nodes: Vec<NodeSpec>,
    initializers: BTreeMap<String, crate::tensor::Tensor>,
) -> Result<ModelGraph> {
    if inputs.is_empty() || outputs.is_empty() {
        return Err(Error::MalformedDocument("graph needs at least one input and one output".into()));
    }
    for sig in inputs.iter().chain(&outputs) {
        if sig.shape.is_empty() || sig.shape.contains(&0) {
            return Err(Error::MalformedDocument(format!(
                "`{}` must have positive dimensions, got {:?}",
                sig.name, sig.shape
            )));
        }
    }

    let mut names_seen = HashSet::new();
    for name in inputs.iter().map(|s| &s.name).chain(initializers.keys()) {
        if !names_seen.insert(name.clone()) {
            return Err(Error::MalformedDocument(format!("value `{name}` defined twice")));
        }
    }
    let mut node_names = HashSet::new();
    for node in &nodes {
        if !node_names.insert(node.name.clone()) {
            return Err(Error::MalformedDocument(format!("duplicate node name `{}`", node.name)));
        }
        if node.outputs.len() != 1 {
            return Err(Error::MalformedDocument(format!("node `{}` must have exactly one output", node.name)));
        }
        for out in &node.outputs {
            if !names_seen.insert(out.clone()) {
                return Err(Error::MalformedDocument(format!("value `{out}` defined twice")));
            }
        }
    }

    let nodes = topo_sort(&inputs, &initializers, nodes)?;
    check_sigmoid_terminal(&nodes, &outputs)?;
    let plan = compile(&inputs, &outputs, &nodes, &initializers)?;
    Ok(ModelGraph { inputs, outputs, nodes, initializers, plan })
}

/// Kahn's algorithm, preferring document order among ready nodes so that
/// an already-sorted document keeps its order.
fn topo_sort(
    inputs: &[TensorSig],
    initializers: &BTreeMap<String, crate::tensor::Tensor>,
    nodes: Vec<NodeSpec>,
) -> Result<Vec<NodeSpec>> {
    let producer: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.outputs[0].as_str(), i)).collect();
    let sources: HashSet<&str> =
        inputs.iter().map(|s| s.name.as_str()).chain(initializers.keys().map(String::as_str)).collect();

    let mut pending = vec![0usize; nodes.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for input in &node.inputs {
            if let Some(&p) = producer.get(input.as_str()) {
                pending[i] += 1;
                children[p].push(i);
            } else if !sources.contains(input.as_str()) {
                return Err(Error::MalformedDocument(format!("node `{}` reads undefined value `{input}`", node.name)));
            }
        }
    }

    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).filter(|i| pending[*i] > 0).map(|i| nodes[i].name.clone()).collect();
        return Err(Error::CyclicGraph(stuck));
    }

    let mut slots: Vec<Option<NodeSpec>> = nodes.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

fn check_sigmoid_terminal(nodes: &[NodeSpec], outputs: &[TensorSig]) -> Result<()> {
    let graph_outputs: HashSet<&str> = outputs.iter().map(|s| s.name.as_str()).collect();
    let consumed: HashSet<&str> = nodes.iter().flat_map(|n| n.inputs.iter().map(String::as_str)).collect();
    let bad: Vec<String> = nodes
        .iter()
        .filter(|n| n.op_type == OpType::Sigmoid)
        .filter(|n| {
            let out = n.outputs[0].as_str();
            !graph_outputs.contains(out) || consumed.contains(out)
        })
        .map(|n| format!("{} (Sigmoid must be terminal)", n.name))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::UnsupportedOperator(bad))
    }
}

impl ModelGraph {
    /// Serializes back to the document form. With `b64` set, initializer
    /// data is written as base64 little-endian doubles.
    pub fn to_json(&self, b64: bool) -> String {
        let doc = OutDocument {
            ir_version: IR_VERSION,
            inputs: &self.inputs,
            outputs: &self.outputs,
            initializers: self
                .initializers
                .iter()
                .map(|(name, t)| TensorDoc::from_tensor(Some(name.clone()), t, b64))
                .collect(),
            nodes: &self.nodes,
        };
        serde_json::to_string_pretty(&doc).expect("graph serialization is infallible")
    }
}
