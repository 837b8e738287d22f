//! Named parameter sets and the glue that binds them into a [`Graph`].

use std::collections::BTreeMap;

use rand::Rng;

use crate::autograd::{Graph, Gradients, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Parameters keyed by name, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec()))).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::InvalidInput(format!(
                "parameter sets differ in size: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (k, v) in &self.entries {
            match other.entries.get(k) {
                None => return Err(Error::InvalidInput(format!("parameter `{k}` missing"))),
                Some(o) if o.shape() != v.shape() => return Err(Error::shape(v.shape(), o.shape())),
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .map(|(k, v)| other.entries.get(k).map_or(f64::INFINITY, |o| v.max_abs_diff(o)))
            .fold(0.0, f64::max)
    }

    /// Euclidean norm over every scalar.
    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Binds every entry into `g` as a trainable leaf or a constant.
    pub fn bind<'g>(&self, g: &'g Graph<T>, trainable: bool) -> Bound<'g, T> {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| {
                let var = if trainable { g.param(v.clone()) } else { g.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

impl<T> FromIterator<(String, Tensor<T>)> for ParameterSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        Self { entries: iter.into_iter().collect() }
    }
}

/// Parameter set placed on a graph.
pub struct Bound<'g, T> {
    vars: BTreeMap<String, Var<'g, T>>,
}

impl<'g, T: Scalar> Bound<'g, T> {
    pub fn var(&self, name: &str) -> Var<'g, T> {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var<'g, T>> {
        self.vars.get(name).copied()
    }

    /// Gradients for every bound entry; entries nothing reached get zeros.
    pub fn grads(&self, grads: &Gradients<T>) -> ParameterSet<T> {
        ParameterSet { entries: self.vars.iter().map(|(k, v)| (k.clone(), grads.get_or_zeros(*v))).collect() }
    }

    /// Names of entries that received any gradient at all (possibly zero-valued).
    pub fn reached(&self, grads: &Gradients<T>) -> Vec<String> {
        self.vars.iter().filter(|(_, v)| grads.get(**v).is_some()).map(|(k, _)| k.clone()).collect()
    }
}

/// A volumetric convolution layer description.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Conv3d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        let pad = kernel.map(|k| k / 2);
        Self { name: name.into(), cin, cout, kernel, stride, pad }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// He-uniform weights, zero bias.
    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R, params: &mut ParameterSet<T>) {
        let fan_in = self.cin * self.kernel.iter().product::<usize>();
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = self.cout * fan_in;
        let w = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        params.insert(self.weight_name(), Tensor::from_vec(vec![self.cout, self.cin, self.kernel[0], self.kernel[1], self.kernel[2]], w));
        params.insert(self.bias_name(), Tensor::zeros(vec![self.cout]));
    }

    pub fn apply<'g, T: Scalar>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.conv3d(p.var(&self.weight_name()), Some(p.var(&self.bias_name())), self.stride, self.pad)
    }

    pub fn num_scalars(&self) -> usize {
        self.cout * self.cin * self.kernel.iter().product::<usize>() + self.cout
    }
}

/// Fully connected layer description.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng>(&self, rng: &mut R, params: &mut ParameterSet<T>) {
        let bound = (1.0 / self.input as f64).sqrt();
        let w = (0..self.input * self.output).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        params.insert(format!("{}.weight", self.name), Tensor::from_vec(vec![self.output, self.input], w));
        params.insert(format!("{}.bias", self.name), Tensor::zeros(vec![self.output]));
    }

    pub fn apply<'g, T: Scalar>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.linear(p.var(&format!("{}.weight", self.name)), Some(p.var(&format!("{}.bias", self.name))))
    }
}
