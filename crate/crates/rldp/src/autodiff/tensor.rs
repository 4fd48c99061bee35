//! Dense row-major f64 tensors and named parameter collections.

use indexmap::IndexMap;

use crate::{Error, Result};

/// Dense tensor of 64-bit floats in row-major order.
///
/// `grad` is populated on parameter tensors by [`crate::autodiff::Graph::backward`];
/// it always has the same length as `values` when present.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Shape {
                context: "Tensor::new".into(),
                detail: format!("shape {:?} implies {} values, got {}", shape, numel, values.len()),
            });
        }
        Ok(Tensor { shape, values, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel], grad: None }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], values: vec![x], grad: None }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Scalar contents; panics if the tensor is not a single element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.values.len(), 1, "item() on non-scalar tensor");
        self.values[0]
    }

    /// Rows of a rank-2 tensor (a rank-1 tensor counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a rank-2 tensor (rank-1 tensors are a single row).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.values.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Ordered collection of named parameter tensors.
///
/// Iteration order is the insertion order, which keeps optimizer updates and
/// checkpoint layouts deterministic across runs.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam { name });
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParam { name: name.into() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam { name: name.into() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn clear_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.clear_grad();
        }
    }
}

/// Deep copy used for target networks: the copy shares nothing with the
/// source and never carries gradients.
pub fn hard_copy_targets(params: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, t) in params.iter() {
        let mut copy = t.clone();
        copy.clear_grad();
        out.entries.insert(name.to_string(), copy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_must_match_values() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn store_rejects_duplicates_and_keeps_order() {
        let mut s = ParamStore::new();
        s.insert("b", Tensor::scalar(1.0)).unwrap();
        s.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(s.insert("a", Tensor::scalar(3.0)).is_err());
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, vec!["b", "a"]);
    }

    #[test]
    fn hard_copy_is_independent() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let copy = hard_copy_targets(&s);
        s.get_mut("w").unwrap().values_mut()[0] = 99.0;
        assert_eq!(copy.get("w").unwrap().values(), &[1.0, 2.0]);
    }

    #[test]
    fn hard_copy_of_empty_store_is_empty() {
        let copy = hard_copy_targets(&ParamStore::new());
        assert!(copy.is_empty());
    }

    #[test]
    fn hard_copy_preserves_name_set() {
        let mut s = ParamStore::new();
        s.insert("x.w0", Tensor::scalar(0.5)).unwrap();
        s.insert("x.b0", Tensor::scalar(0.25)).unwrap();
        let copy = hard_copy_targets(&s);
        let a: Vec<_> = s.names().collect();
        let b: Vec<_> = copy.names().collect();
        assert_eq!(a, b);
    }
}
