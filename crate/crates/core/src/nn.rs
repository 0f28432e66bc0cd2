//! Named parameters and thin layer wrappers over [`ops`](crate::ops).

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Initial values for a new parameter.
#[derive(Debug, Clone)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zeros,
    Ones,
    Values(Vec<f64>),
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct NetworkParams<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::contract(format!("duplicate parameter name `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn param_count(&self) -> usize {
        self.tensors().map(Tensor::numel).sum()
    }

    /// Parameter counts grouped by the first `depth` components of each
    /// dotted name, in first-appearance order.
    pub fn count_by_prefix(&self, depth: usize) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.iter() {
            let key = name.split('.').take(depth).collect::<Vec<_>>().join(".");
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, c)) => *c += t.numel(),
                None => out.push((key, t.numel())),
            }
        }
        out
    }

    pub fn zero_grad(&self) {
        self.tensors().for_each(Tensor::zero_grad);
    }

    /// Independent copy in another precision; every entry is a fresh
    /// parameter leaf.
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| {
                    let c = t.cast::<U>();
                    (n.clone(), Tensor::parameter(c.shape(), c.to_vec()).expect("same shape"))
                })
                .collect(),
        }
    }
}

/// Hands out parameters by hierarchical name while a network is being
/// assembled, either freshly initialized from a seeded generator or taken
/// from an existing set.
pub struct ParamStore<T: Scalar> {
    rng: ChaCha8Rng,
    source: Option<HashMap<String, Tensor<T>>>,
    entries: Vec<(String, Tensor<T>)>,
    names: HashSet<String>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            source: None,
            entries: Vec::new(),
            names: HashSet::new(),
        }
    }

    /// Store that resolves every request from `params`.
    pub fn from_params(params: &NetworkParams<T>) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            source: Some(params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()),
            entries: Vec::new(),
            names: HashSet::new(),
        }
    }

    pub fn uniform01(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor<T>> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::contract(format!("parameter `{name}` requested twice")));
        }
        let numel: usize = shape.iter().product();
        let t = match &mut self.source {
            Some(src) => {
                let t = src
                    .remove(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
                if t.shape() != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` has shape {:?}, network expects {shape:?}",
                        t.shape()
                    )));
                }
                t
            }
            None => {
                let values: Vec<f64> = match init {
                    Init::FanIn(fan_in) => {
                        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                        (0..numel).map(|_| self.rng.gen_range(-bound..bound)).collect()
                    }
                    Init::Zeros => vec![0.0; numel],
                    Init::Ones => vec![1.0; numel],
                    Init::Values(v) => {
                        if v.len() != numel {
                            return Err(Error::contract(format!("`{name}`: init has wrong length")));
                        }
                        v
                    }
                };
                Tensor::parameter(shape, values.into_iter().map(T::from_f64_lossy).collect())?
            }
        };
        self.entries.push((name.to_string(), t.clone()));
        Ok(t)
    }

    /// Finishes assembly. Fails if a loaded set contained names the network
    /// never requested.
    pub fn finish(self) -> Result<NetworkParams<T>> {
        if let Some(src) = &self.source {
            if let Some(extra) = src.keys().min() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{extra}` does not belong to the configured network"
                )));
            }
        }
        NetworkParams::new(self.entries)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    /// Square `k x k` kernel with "same" padding (for odd `k`).
    pub fn new(store: &mut ParamStore<T>, prefix: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        let weight = store.param(&format!("{prefix}.weight"), &[cout, cin, k, k], Init::FanIn(cin * k * k))?;
        let bias = Some(store.param(&format!("{prefix}.bias"), &[cout], Init::Zeros)?);
        Ok(Self {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        let weight = store.param(&format!("{prefix}.weight"), &[dout, din], Init::FanIn(din))?;
        let bias = if bias {
            Some(store.param(&format!("{prefix}.bias"), &[dout], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::linear(x, &self.weight, self.bias.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> LayerNormLayer<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{prefix}.gamma"), &[channels], Init::Ones)?,
            beta: store.param(&format!("{prefix}.beta"), &[channels], Init::Zeros)?,
            eps: T::from_f64_lossy(1e-5),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_param_count() {
        let mut store = ParamStore::<f32>::seeded(1);
        Conv2dLayer::new(&mut store, "c", 1, 8, 3, 1).unwrap();
        assert_eq!(store.finish().unwrap().param_count(), 80);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::<f32>::seeded(1);
        store.param("a", &[1], Init::Zeros).unwrap();
        assert!(store.param("a", &[1], Init::Zeros).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let build = || {
            let mut s = ParamStore::<f32>::seeded(42);
            s.param("w", &[4, 4], Init::FanIn(4)).unwrap().to_vec()
        };
        assert_eq!(build(), build());
        assert!(build().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn load_mode_checks_names_and_shapes() {
        let mut s = ParamStore::<f64>::seeded(0);
        s.param("a", &[2], Init::Ones).unwrap();
        s.param("b", &[3], Init::Zeros).unwrap();
        let p = s.finish().unwrap();

        let mut l = ParamStore::from_params(&p);
        assert!(l.param("a", &[3], Init::Zeros).is_err());

        let mut l = ParamStore::from_params(&p);
        l.param("a", &[2], Init::Zeros).unwrap();
        assert!(l.finish().is_err(), "unused `b` must be reported");
    }
}
