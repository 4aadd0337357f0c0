use std::collections::BTreeMap;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use super::{Gradients, Graph, Matrix, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a parameter inside a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry<T> {
    name: String,
    value: Matrix<T>,
}

/// Named, ordered set of trainable matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    entries: Vec<Entry<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk checkpoint: parameter name to shape plus row-major values.
pub type Checkpoint = BTreeMap<String, Record>;

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Params {
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry { name, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    pub fn values(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.entries.iter().map(|e| &e.value)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix<T>> {
        self.entries.iter_mut().map(|e| &mut e.value)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.data.len()).sum()
    }

    pub(crate) fn bind(&self, graph: &Graph<T>, trainable: bool) -> Bound<T> {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                if trainable {
                    graph.param(e.value.clone())
                } else {
                    graph.constant(e.value.clone())
                }
            })
            .collect();
        Bound { tensors }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    Record {
                        shape: vec![e.value.rows, e.value.cols],
                        values: e.value.data.iter().map(|v| v.as_f64()).collect(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites every registered parameter from `ckpt`. Names and shapes
    /// must match exactly; extra checkpoint entries are ignored.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for e in &mut self.entries {
            let rec = ckpt
                .get(&e.name)
                .ok_or_else(|| Error::contract(format!("checkpoint lacks parameter {}", e.name)))?;
            if rec.shape != [e.value.rows, e.value.cols] || rec.values.len() != e.value.data.len() {
                return Err(Error::Dimension {
                    op: "load_checkpoint",
                    lhs: vec![e.value.rows, e.value.cols],
                    rhs: rec.shape.clone(),
                });
            }
            e.value.data = rec.values.iter().map(|&v| T::lit(v)).collect();
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn load_json(&mut self, json: &str) -> Result<()> {
        let ckpt: Checkpoint = serde_json::from_str(json)
            .map_err(|e| Error::contract(format!("malformed checkpoint: {e}")))?;
        self.load_checkpoint(&ckpt)
    }
}

/// Graph leaves for a [`Params`] store, indexable by [`ParamId`].
pub struct Bound<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Bound<T> {
    /// Per-parameter gradients aligned with the store; zero where the loss does
    /// not depend on a parameter.
    pub fn gradients(&self, grads: &Gradients<T>) -> Vec<Matrix<T>> {
        self.tensors
            .iter()
            .map(|t| {
                grads.get(t).cloned().unwrap_or_else(|| {
                    let [r, c] = t.shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

impl<T> Index<ParamId> for Bound<T> {
    type Output = Tensor<T>;

    fn index(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }
}
