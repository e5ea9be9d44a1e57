use std::collections::{BTreeMap, BTreeSet};

use super::TensorError;

/// Dense row-major `f64` array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        check_shape(&shape, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            values,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<(), TensorError> {
        if delta.len() != self.values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "accumulate_grad",
                dim: 0,
                expected: self.values.len(),
                found: delta.len(),
            });
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "accumulate_grad" });
        }
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
        Ok(())
    }
}

pub(crate) fn check_shape(shape: &[usize], len: usize) -> Result<(), TensorError> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(TensorError::ShapeMismatch {
            op: "tensor",
            dim: 0,
            expected: n,
            found: len,
        });
    }
    Ok(())
}

/// Named parameters keyed by dotted path, plus the subset excluded from updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(path.into(), tensor.with_requires_grad(true))
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn require(&self, path: &str) -> Result<&Tensor, TensorError> {
        self.tensors
            .get(path)
            .ok_or_else(|| TensorError::MissingParameter(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn remove(&mut self, path: &str) -> Option<Tensor> {
        self.frozen.remove(path);
        self.tensors.remove(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across the given paths.
    pub fn scalar_count<'a>(&self, paths: impl IntoIterator<Item = &'a String>) -> usize {
        paths
            .into_iter()
            .filter_map(|p| self.tensors.get(p))
            .map(Tensor::len)
            .sum()
    }

    pub fn freeze(&mut self, path: &str) -> Result<(), TensorError> {
        if !self.tensors.contains_key(path) {
            return Err(TensorError::MissingParameter(path.to_string()));
        }
        self.frozen.insert(path.to_string());
        Ok(())
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, path: &str) -> bool {
        self.frozen.contains(path)
    }

    pub fn frozen_paths(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Copies every tensor of `other` into `self`, keeping frozen flags of `self`.
    pub fn load_from(&mut self, other: &ParameterSet) -> Result<(), TensorError> {
        for (path, tensor) in other.iter() {
            let slot = self
                .tensors
                .get_mut(path)
                .ok_or_else(|| TensorError::MissingParameter(path.clone()))?;
            if slot.shape() != tensor.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_from",
                    dim: 0,
                    expected: slot.len(),
                    found: tensor.len(),
                });
            }
            slot.values_mut().copy_from_slice(tensor.values());
        }
        Ok(())
    }

    /// Restricts to the given paths, failing if any is missing.
    pub fn subset<'a>(&self, paths: impl IntoIterator<Item = &'a str>) -> Result<ParameterSet, TensorError> {
        let mut out = ParameterSet::new();
        for path in paths {
            let t = self.require(path)?;
            out.tensors.insert(path.to_string(), t.clone());
            if self.frozen.contains(path) {
                out.frozen.insert(path.to_string());
            }
        }
        Ok(out)
    }
}
