//! Dense double-precision tensors and the named parameter store.

use crate::error::{Error, Result};

/// Row-major dense tensor. Rank 1 or 2 is all the IRN pipeline needs;
/// a rank-1 tensor of length n is treated as a 1×n row where a matrix
/// is expected.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor_new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![1, n],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) view; rank-1 tensors are rows.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::Shape {
                op: "dims2",
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Whether a parameter is filled by the weight initializer or left at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    kind: ParamKind,
    tensor: Tensor,
}

/// Named collection of learnable tensors. Registration order is the canonical
/// order used by the optimizer, the initializer and the checkpoint format.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ParamKind, mut tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.by_name(&name).is_none(),
            "duplicate parameter name {name}"
        );
        tensor.requires_grad = true;
        tensor.grad = Some(vec![0.0; tensor.numel()]);
        self.entries.push(ParamEntry { name, kind, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Copies `grads` into each tensor's `grad` slot.
    pub fn set_grads(&mut self, grads: &Gradients) {
        for id in 0..self.entries.len() {
            let g = &grads.by_param[id];
            self.entries[id].tensor.grad = Some(g.clone());
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.grad = Some(vec![0.0; e.tensor.numel()]);
        }
    }

    /// Snapshot of all parameter values, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.tensor.data.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "snapshot has {} parameters, store has {}",
                snapshot.len(),
                self.entries.len()
            )));
        }
        for (e, s) in self.entries.iter_mut().zip(snapshot) {
            if e.tensor.numel() != s.len() {
                return Err(Error::Shape {
                    op: "restore",
                    lhs: e.tensor.shape.clone(),
                    rhs: vec![s.len()],
                });
            }
            e.tensor.data.copy_from_slice(s);
        }
        Ok(())
    }
}

/// Per-parameter gradients in store registration order. Parameters the loss
/// never touched keep zero gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_param: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Gradients {
            by_param: store
                .entries
                .iter()
                .map(|e| vec![0.0; e.tensor.numel()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.by_param[id.0]
    }

    pub(crate) fn set(&mut self, id: ParamId, g: Vec<f64>) {
        debug_assert_eq!(self.by_param[id.0].len(), g.len());
        self.by_param[id.0] = g;
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        debug_assert_eq!(self.by_param.len(), other.by_param.len());
        for (a, b) in self.by_param.iter_mut().zip(&other.by_param) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.by_param {
            for x in g.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.by_param
            .iter()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.by_param
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn store_registration_and_lookup() {
        let mut store = ParamStore::new();
        let w = store.register("w", ParamKind::Weight, Tensor::zeros(vec![2, 2]));
        let b = store.register("b", ParamKind::Bias, Tensor::zeros(vec![2]));
        assert_eq!(store.len(), 2);
        assert_eq!(store.name(w), "w");
        assert_eq!(store.kind(b), ParamKind::Bias);
        assert_eq!(store.by_name("w"), Some(w));
        assert!(store.get(w).requires_grad);
        assert_eq!(store.get(w).grad.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut store = ParamStore::new();
        let w = store.register("w", ParamKind::Weight, Tensor::zeros(vec![3]));
        store.get_mut(w).data.copy_from_slice(&[1.0, 2.0, 3.0]);
        let snap = store.snapshot();
        store.get_mut(w).data.copy_from_slice(&[9.0, 9.0, 9.0]);
        store.restore(&snap).unwrap();
        assert_eq!(store.get(w).data, vec![1.0, 2.0, 3.0]);
    }
}
