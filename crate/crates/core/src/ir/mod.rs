//! Computation-graph intermediate representation.
//!
//! A [`ModelGraph`] is loaded from a JSON document, validated against the
//! operator registry, topologically ordered and shape-checked once. After
//! loading it is immutable and can be shared between threads.

mod builder;
mod doc;
mod forward;
pub(crate) mod ops;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub use builder::GraphBuilder;
pub use doc::parse_model;
pub(crate) use ops::{CompiledNode, Op, Operand, Plan};

/// Name and static shape of a graph input or output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSig {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The supported operator registry. Every member is linear or
/// piecewise-linear, except `Sigmoid` which is only accepted as a terminal
/// activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpType {
    Conv,
    ConvTranspose,
    Gemm,
    MatMul,
    Add,
    Sub,
    Neg,
    MulScalar,
    Relu,
    LeakyRelu,
    MaxPool,
    AveragePool,
    GlobalAveragePool,
    BatchNormalization,
    Flatten,
    Reshape,
    Transpose,
    Concat,
    Slice,
    UpsampleNearest,
    Abs,
    Sigmoid,
}

impl OpType {
    pub const ALL: [OpType; 22] = [
        OpType::Conv,
        OpType::ConvTranspose,
        OpType::Gemm,
        OpType::MatMul,
        OpType::Add,
        OpType::Sub,
        OpType::Neg,
        OpType::MulScalar,
        OpType::Relu,
        OpType::LeakyRelu,
        OpType::MaxPool,
        OpType::AveragePool,
        OpType::GlobalAveragePool,
        OpType::BatchNormalization,
        OpType::Flatten,
        OpType::Reshape,
        OpType::Transpose,
        OpType::Concat,
        OpType::Slice,
        OpType::UpsampleNearest,
        OpType::Abs,
        OpType::Sigmoid,
    ];

    pub fn from_name(name: &str) -> Option<OpType> {
        OpType::ALL.into_iter().find(|op| op.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpType::Conv => "Conv",
            OpType::ConvTranspose => "ConvTranspose",
            OpType::Gemm => "Gemm",
            OpType::MatMul => "MatMul",
            OpType::Add => "Add",
            OpType::Sub => "Sub",
            OpType::Neg => "Neg",
            OpType::MulScalar => "MulScalar",
            OpType::Relu => "Relu",
            OpType::LeakyRelu => "LeakyRelu",
            OpType::MaxPool => "MaxPool",
            OpType::AveragePool => "AveragePool",
            OpType::GlobalAveragePool => "GlobalAveragePool",
            OpType::BatchNormalization => "BatchNormalization",
            OpType::Flatten => "Flatten",
            OpType::Reshape => "Reshape",
            OpType::Transpose => "Transpose",
            OpType::Concat => "Concat",
            OpType::Slice => "Slice",
            OpType::UpsampleNearest => "UpsampleNearest",
            OpType::Abs => "Abs",
            OpType::Sigmoid => "Sigmoid",
        }
    }

    /// Operators that split the input line into pieces.
    pub fn is_piecewise(self) -> bool {
        matches!(self, OpType::Relu | OpType::LeakyRelu | OpType::MaxPool | OpType::Abs)
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One node as written in the document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub op_type: OpType,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, serde_json::Value>,
}

/// A validated, topologically ordered computation graph.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    inputs: Vec<TensorSig>,
    outputs: Vec<TensorSig>,
    nodes: Vec<NodeSpec>,
    initializers: BTreeMap<String, Tensor>,
    plan: Plan,
}

impl ModelGraph {
    pub fn inputs(&self) -> &[TensorSig] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[TensorSig] {
        &self.outputs
    }

    /// Nodes in topological order.
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn initializers(&self) -> &BTreeMap<String, Tensor> {
        &self.initializers
    }

    pub(crate) fn plan(&self) -> &Plan {
        &self.plan
    }

    /// Count of nodes per operator type.
    pub fn op_histogram(&self) -> BTreeMap<OpType, usize> {
        let mut hist = BTreeMap::new();
        for n in &self.nodes {
            *hist.entry(n.op_type).or_insert(0) += 1;
        }
        hist
    }

    /// Whether graph output `o_idx` is produced by a terminal Sigmoid.
    pub fn output_is_sigmoid(&self, o_idx: usize) -> bool {
        self.plan.output_sigmoid.get(o_idx).copied().unwrap_or(false)
    }

    /// Number of nodes that can split the line into pieces.
    pub fn piecewise_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.op_type.is_piecewise()).count()
    }
}
