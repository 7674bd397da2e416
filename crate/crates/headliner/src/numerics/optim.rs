//! Named parameters, uniform initialization, gradient clipping, and plain
//! mini-batch SGD.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::tensor::Tensor;

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.1;

/// One trainable tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// An ordered, name-indexed collection of parameters. Iteration order is
/// insertion order, which keeps reductions over the set reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    /// Registers a parameter and returns its slot. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let slot = self.params.len();
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.clone(), slot);
        self.params.push(Parameter { name, value, grad });
        slot
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.slot(name).map(|s| self.get(s))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// I.i.d. uniform samples on [−0.1, 0.1].
pub fn init_uniform(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor {
    let n = shape.iter().product::<usize>().max(usize::from(shape.is_empty()));
    let data = (0..n)
        .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
        .collect();
    Tensor::from_vec(shape, data).expect("generated data matches shape")
}

/// [`init_uniform`] with its own seed; identical seeds give identical
/// tensors.
pub fn init_uniform_seeded(shape: &[usize], seed: u64) -> Tensor {
    init_uniform(shape, &mut ChaCha12Rng::seed_from_u64(seed))
}

/// Rescales all gradients so their global L2 norm is at most `threshold`.
/// Returns the scale applied (1.0 when untouched). Idempotent.
pub fn clip_global_norm(set: &mut ParamSet, threshold: f64) -> f64 {
    let norm = set.grad_norm();
    if norm <= threshold || norm == 0.0 {
        return 1.0;
    }
    let scale = threshold / norm;
    for p in set.iter_mut() {
        for g in p.grad.data_mut() {
            *g *= scale;
        }
    }
    scale
}

/// `value ← value − lr·grad` for every parameter, then zeroes the grads.
pub fn sgd_step(set: &mut ParamSet, learning_rate: f64) {
    for p in set.iter_mut() {
        let grad = p.grad.data().to_vec();
        for (v, g) in p.value.data_mut().iter_mut().zip(grad) {
            *v -= learning_rate * g;
        }
        p.grad = Tensor::zeros(p.value.shape());
    }
}
