use super::tensor::{Shape, Tensor};
use super::Scalar;
use crate::error::{ensure_arg, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Appends a parameter and returns its index. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<usize> {
        let name = name.into();
        ensure_arg!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            tensor: tensor.with_grad(),
        });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.params[i].tensor)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.shape().numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    /// Converts every value to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: Tensor::from_vec(
                        p.tensor.shape(),
                        p.tensor.data().iter().map(|v| U::of(v.as_f64())).collect(),
                    )
                    .expect("same shape")
                    .with_grad(),
                })
                .collect(),
        }
    }

    /// Names and shapes, in order.
    pub fn layout(&self) -> Vec<(String, Shape)> {
        self.params.iter().map(|p| (p.name.clone(), p.tensor.shape())).collect()
    }
}
