use std::collections::HashMap;

use ndarray::Array2;

use crate::real::Real;

/// Ordered collection of named 2-D parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    names: Vec<String>,
    tensors: Vec<Array2<F>>,
    index: HashMap<String, usize>,
}

impl<F> Default for ParamSet<F> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor. Panics on a duplicate name.
    pub fn push(&mut self, name: impl Into<String>, tensor: Array2<F>) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &Array2<F> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Array2<F> {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<F>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<F>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (name, t) in self.iter() {
            out.push(name, t.mapv(|v| G::lit(v.as_f64())));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
