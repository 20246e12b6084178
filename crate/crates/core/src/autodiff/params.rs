use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor registered in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    /// Row-sparse gradients (embedding tables).
    sparse_rows: bool,
}

/// All trainable tensors, each registered exactly once under a unique name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.insert(name.into(), value, false)
    }

    /// Registers a 2-D table whose gradients arrive as touched rows only.
    pub fn register_sparse(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        if value.shape().len() != 2 {
            return Err(Error::config("sparse parameters must be matrices"));
        }
        self.insert(name.into(), value, true)
    }

    fn insert(&mut self, name: String, value: Tensor, sparse_rows: bool) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::config(format!("parameter {name} registered twice")));
        }
        self.params.push(Param {
            name,
            value,
            sparse_rows,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_sparse(&self, id: ParamId) -> bool {
        self.params[id.0].sparse_rows
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradient of one parameter: dense, or a map of touched rows.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl ParamGrad {
    /// Dense copy of the gradient for a parameter with `len` scalars.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            ParamGrad::Dense(v) => v.clone(),
            ParamGrad::Rows { width, rows } => {
                let mut out = vec![0.0; len];
                for (&r, g) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(g);
                }
                out
            }
        }
    }

    fn add_dense(&mut self, g: &[f64]) {
        match self {
            ParamGrad::Dense(v) => {
                for (a, b) in v.iter_mut().zip(g) {
                    *a += b;
                }
            }
            ParamGrad::Rows { .. } => {
                let mut dense = self.to_dense(g.len());
                for (a, b) in dense.iter_mut().zip(g) {
                    *a += b;
                }
                *self = ParamGrad::Dense(dense);
            }
        }
    }

    fn add_row(&mut self, row: usize, g: &[f64]) {
        match self {
            ParamGrad::Dense(v) => {
                let w = g.len();
                for (a, b) in v[row * w..(row + 1) * w].iter_mut().zip(g) {
                    *a += b;
                }
            }
            ParamGrad::Rows { width, rows } => {
                let slot = rows.entry(row).or_insert_with(|| vec![0.0; *width]);
                for (a, b) in slot.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        match self {
            ParamGrad::Dense(v) => v.iter_mut().for_each(|x| *x *= factor),
            ParamGrad::Rows { rows, .. } => rows
                .values_mut()
                .for_each(|r| r.iter_mut().for_each(|x| *x *= factor)),
        }
    }
}

/// Gradients for every parameter of a store; `None` means exactly zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Option<ParamGrad>>,
}

impl ParamGrads {
    pub fn new(num_params: usize) -> Self {
        ParamGrads {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Dense gradient of a parameter, zeros when it received none.
    pub fn dense(&self, store: &ParameterStore, id: ParamId) -> Vec<f64> {
        let len = store.get(id).len();
        match self.get(id) {
            Some(g) => g.to_dense(len),
            None => vec![0.0; len],
        }
    }

    pub(crate) fn accumulate_dense(&mut self, id: ParamId, g: &[f64]) {
        self.grads[id.0]
            .get_or_insert_with(|| ParamGrad::Dense(vec![0.0; g.len()]))
            .add_dense(g);
    }

    pub(crate) fn accumulate_row(
        &mut self,
        store: &ParameterStore,
        id: ParamId,
        row: usize,
        g: &[f64],
    ) {
        let slot = &mut self.grads[id.0];
        if slot.is_none() {
            *slot = Some(if store.is_sparse(id) {
                ParamGrad::Rows {
                    width: g.len(),
                    rows: BTreeMap::new(),
                }
            } else {
                ParamGrad::Dense(vec![0.0; store.get(id).len()])
            });
        }
        slot.as_mut().unwrap().add_row(row, g);
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: &ParamGrads) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                None => *mine = Some(theirs.clone()),
                Some(m) => match theirs {
                    ParamGrad::Dense(v) => m.add_dense(v),
                    ParamGrad::Rows { rows, .. } => {
                        for (&r, g) in rows {
                            m.add_row(r, g);
                        }
                    }
                },
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(factor);
        }
    }
}
