use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Named trainable tensors in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (n, v) in self.iter() {
            out.insert(n, Array2::zeros(v.dim()));
        }
        out
    }

    /// Replaces every value with the tensor of the same name in `tensors`,
    /// which must have exactly the same names and shapes.
    pub fn load_from(&mut self, tensors: &[(String, Array2<f64>)]) -> Result<()> {
        let mut seen = 0;
        for (name, value) in tensors {
            let Some(i) = self.index_of(name) else {
                continue;
            };
            if self.values[i].dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    value.dim(),
                    self.values[i].dim()
                )));
            }
            self.values[i] = value.clone();
            seen += 1;
        }
        if seen != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint provides {seen} of {} parameters",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Deterministic initializer drawing from one seeded stream in parameter
/// creation order.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: (usize, usize), bound: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || self.rng.random_range(-bound..bound))
    }

    /// He-uniform weights for a `(out, fan_in)` matrix.
    pub fn he(&mut self, out: usize, fan_in: usize) -> Array2<f64> {
        self.uniform((out, fan_in), (6.0 / fan_in as f64).sqrt())
    }

    /// LeCun-uniform weights for a linear map.
    pub fn lecun(&mut self, out: usize, fan_in: usize) -> Array2<f64> {
        self.uniform((out, fan_in), (3.0 / fan_in as f64).sqrt())
    }
}
