//! Named parameter store and seeded initialization.
//!
//! Parameters are kept on the f32 grid (checkpoints store f32), so a
//! save/load round trip reproduces the in-memory model bitwise.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor) {
        t.quantize_f32();
        self.map.insert(name.into(), t.with_grad());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Name-sorted iteration; the order is the checkpoint schema order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }
}

/// All parameters registered as graph leaves for one forward pass.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(g: &mut Graph, p: &Params) -> Bound {
        let vars = p.iter().map(|(n, t)| (n.clone(), g.leaf(t))).collect();
        Bound { vars }
    }

    /// Wrap an existing name -> leaf mapping (gradient-check harness).
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Bound {
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

// ── seeded init ──

fn uniform(rng: &mut ChaCha8Rng, bound: Real) -> Real {
    (rng.gen::<f64>() as Real) * 2.0 * bound - bound
}

/// Kaiming-style fan-in uniform: bound = sqrt(6 / fan_in).
pub fn kaiming(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as Real).sqrt();
    Tensor::from_fn(shape, |_| uniform(rng, bound))
}

pub fn conv_weight(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> Tensor {
    kaiming(rng, &[cout, cin, k, k], cin * k * k)
}

pub fn conv1x1_weight(rng: &mut ChaCha8Rng, cout: usize, cin: usize) -> Tensor {
    kaiming(rng, &[cout, cin], cin)
}

pub fn depthwise_weight(rng: &mut ChaCha8Rng, c: usize, k: usize) -> Tensor {
    kaiming(rng, &[c, k, k], k * k)
}

/// Linear weight in row-vector convention: [n_in, n_out].
pub fn linear_weight(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Tensor {
    kaiming(rng, &[n_in, n_out], n_in)
}

pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}
