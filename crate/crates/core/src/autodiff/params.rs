use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient buffer and Adam moments.
///
/// Row-sparse parameters (embedding tables) track which rows received
/// gradient; the optimizer only touches those rows.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
    pub row_sparse: bool,
    touched_rows: BTreeSet<usize>,
}

impl ParamTensor {
    fn new(name: String, value: Tensor, row_sparse: bool) -> Self {
        let zeros = Tensor::zeros(value.shape());
        ParamTensor {
            name,
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
            step_count: 0,
            row_sparse,
            touched_rows: BTreeSet::new(),
        }
    }

    pub fn touched_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.touched_rows.iter().copied()
    }

    pub fn zero_grad(&mut self) {
        if self.row_sparse {
            let rows: Vec<usize> = self.touched_rows.iter().copied().collect();
            for r in rows {
                self.grad.row_mut(r).iter_mut().for_each(|g| *g = 0.0);
            }
        } else {
            self.grad.fill(0.0);
        }
        self.touched_rows.clear();
    }
}

/// Gradient contribution of one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    pub(crate) entries: BTreeMap<ParamId, GradEntry>,
}

#[derive(Clone, Debug)]
pub(crate) enum GradEntry {
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

impl ParamGrads {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Dense view of the gradient for `id`, if any was produced.
    pub fn dense(&self, id: ParamId, shape: &[usize]) -> Option<Tensor> {
        let entry = self.entries.get(&id)?;
        let mut t = Tensor::zeros(shape);
        match entry {
            GradEntry::Dense(g) => t.data_mut().copy_from_slice(g),
            GradEntry::Rows(rows) => {
                for (&r, g) in rows {
                    t.row_mut(r).copy_from_slice(g);
                }
            }
        }
        Some(t)
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, g: &[f64]) {
        match self.entries.get_mut(&id) {
            Some(GradEntry::Dense(acc)) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            Some(GradEntry::Rows(_)) => unreachable!("parameter used both densely and by row"),
            None => {
                self.entries.insert(id, GradEntry::Dense(g.to_vec()));
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let entry = self
            .entries
            .entry(id)
            .or_insert_with(|| GradEntry::Rows(BTreeMap::new()));
        match entry {
            GradEntry::Rows(rows) => match rows.get_mut(&row) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    rows.insert(row, g.to_vec());
                }
            },
            GradEntry::Dense(_) => unreachable!("parameter used both densely and by row"),
        }
    }
}

/// Owns every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    /// Registers a lookup table whose gradients and updates are row-sparse.
    pub fn add_table(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    fn push(&mut self, name: String, value: Tensor, row_sparse: bool) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(ParamTensor::new(name, value, row_sparse));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Adds a backward pass's gradients into the stored buffers.
    /// Buffers keep accumulating until an optimizer step or [`ParamStore::zero_grad`].
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (id, entry) in &grads.entries {
            let p = &mut self.params[id.0];
            match entry {
                GradEntry::Dense(g) => {
                    p.grad.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    if p.row_sparse {
                        p.touched_rows.extend(0..p.value.rows());
                    }
                }
                GradEntry::Rows(rows) => {
                    for (&r, g) in rows {
                        p.grad.row_mut(r).iter_mut().zip(g).for_each(|(a, b)| *a += b);
                        p.touched_rows.insert(r);
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected Adam step over every parameter, then clears gradients.
    ///
    /// Fails without modifying anything if some gradient is not finite.
    pub fn update(&self, store: &mut ParamStore) -> Result<()> {
        for p in &store.params {
            let finite = if p.row_sparse {
                p.touched_rows
                    .iter()
                    .all(|&r| p.grad.row(r).iter().all(|g| g.is_finite()))
            } else {
                p.grad.all_finite()
            };
            if !finite {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        for p in &mut store.params {
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let cols = p.value.cols();
            let ranges: Vec<(usize, usize)> = if p.row_sparse {
                p.touched_rows.iter().map(|&r| (r * cols, (r + 1) * cols)).collect()
            } else {
                vec![(0, p.value.len())]
            };
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            for (start, end) in ranges {
                for i in start..end {
                    let g = grad[i];
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    grad[i] = 0.0;
                }
            }
            p.touched_rows.clear();
        }
        Ok(())
    }
}
