//! Dense row-major `f64` tensors and their JSON encoding.
//!
//! On disk a tensor is `{"shape": [...], "data": [...]}` where `data` may be
//! flat or nested to any depth, or `{"shape": [...], "data_b64": "..."}`
//! holding little-endian IEEE-754 doubles.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    /// A one-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("elementwise", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn to_b64(&self) -> String {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        B64.encode(bytes)
    }

    pub fn from_json_str(text: &str) -> Result<Tensor> {
        let doc: TensorDoc = serde_json::from_str(text).map_err(|e| Error::MalformedDocument(e.to_string()))?;
        doc.into_tensor("tensor")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("tensor serialization is infallible")
    }
}

/// Wire form shared by tensor files and IR initializers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TensorDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_b64: Option<String>,
}

impl TensorDoc {
    pub fn from_tensor(name: Option<String>, t: &Tensor, b64: bool) -> Self {
        let (data, data_b64) = if b64 { (None, Some(t.to_b64())) } else { (Some(Value::from(t.data.clone())), None) };
        TensorDoc { name, shape: t.shape.clone(), data, data_b64 }
    }

    pub fn into_tensor(self, context: &str) -> Result<Tensor> {
        let values = match (self.data, self.data_b64) {
            (Some(_), Some(_)) => {
                return Err(Error::MalformedDocument(format!("{context}: both `data` and `data_b64` given")))
            }
            (None, None) => return Err(Error::MalformedDocument(format!("{context}: missing `data` or `data_b64`"))),
            (Some(v), None) => {
                let mut out = Vec::new();
                flatten_json(&v, &mut out).map_err(|e| Error::MalformedDocument(format!("{context}: {e}")))?;
                out
            }
            (None, Some(s)) => decode_b64(&s).map_err(|e| Error::MalformedDocument(format!("{context}: {e}")))?,
        };
        Tensor::new(self.shape, values)
            .map_err(|_| Error::MalformedDocument(format!("{context}: data length does not match shape")))
    }
}

fn flatten_json(v: &Value, out: &mut Vec<f64>) -> std::result::Result<(), String> {
    match v {
        Value::Array(items) => {
            for item in items {
                flatten_json(item, out)?;
            }
            Ok(())
        }
        Value::Number(n) => {
            out.push(n.as_f64().ok_or("number out of range")?);
            Ok(())
        }
        other => Err(format!("expected number or array, found {other}")),
    }
}

fn decode_b64(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = B64.decode(s.trim()).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("base64 payload of {} bytes is not a multiple of 8", bytes.len()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TensorDoc::from_tensor(None, self, false).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = TensorDoc::deserialize(deserializer)?;
        doc.into_tensor("tensor").map_err(serde::de::Error::custom)
    }
}
