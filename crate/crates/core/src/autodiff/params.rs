use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::{DiffError, Result};

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameter slots with gradient accumulators and Adam moments.
///
/// Slot order is insertion order and fixed after model construction; every
/// buffer keeps the shape of its parameter. A single writer (the training
/// loop) mutates the store; inference clones or borrows it read-only.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let slot = self.slots.len();
        self.index.insert(name.to_string(), slot);
        let shape = value.shape().to_vec();
        self.slots.push(Slot {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(shape.clone()),
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
        });
        Ok(slot)
    }

    pub fn slot(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(self.value_at(self.slot(name)?))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.slots[self.slot(name)?].grad)
    }

    pub(crate) fn value_at(&self, slot: usize) -> &Tensor {
        &self.slots[slot].value
    }

    pub fn name_at(&self, slot: usize) -> &str {
        &self.slots[slot].name
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Names in slot order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Overwrite one parameter's values (checkpoint load, tests).
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.slot(name)?;
        if value.shape() != self.slots[slot].value.shape() {
            return Err(DiffError::ShapeMismatch {
                op: "param_set",
                lhs: self.slots[slot].value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.slots[slot].value = value;
        Ok(())
    }

    /// Nudge a single element — used by the finite-difference harness.
    pub(crate) fn perturb(&mut self, slot: usize, elem: usize, delta: f64) {
        self.slots[slot].value.data_mut()[elem] += delta;
    }

    pub(crate) fn add_to_grad(&mut self, slot: usize, g: &[f64], scale: f64) {
        for (d, gg) in self.slots[slot].grad.data_mut().iter_mut().zip(g) {
            *d += scale * gg;
        }
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.data_mut().fill(0.0);
        }
    }

    pub(crate) fn scale_grads(&mut self, scale: f64) {
        for s in &mut self.slots {
            for g in s.grad.data_mut() {
                *g *= scale;
            }
        }
    }

    pub(crate) fn grad_at(&self, slot: usize) -> &Tensor {
        &self.slots[slot].grad
    }

    pub(crate) fn adam_buffers(&mut self, slot: usize) -> (&mut Tensor, &mut Tensor, &mut Tensor) {
        let s = &mut self.slots[slot];
        (&mut s.value, &mut s.m, &mut s.v)
    }

    /// First and second Adam moments of a slot (read-only, for diagnostics).
    pub fn moments(&self, name: &str) -> Result<(&Tensor, &Tensor)> {
        let slot = self.slot(name)?;
        Ok((&self.slots[slot].m, &self.slots[slot].v))
    }

    /// Global L2 norm over all gradient accumulators.
    pub fn grad_norm(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform init in `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
///
/// Matrices `[out, in]` use `fan_in = in`, `fan_out = out`; vectors of
/// length `n` use `fan_in = fan_out = n`.
pub fn glorot_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let (fan_in, fan_out) = match shape.len() {
        2 => (shape[1], shape[0]),
        _ => {
            let n: usize = shape.iter().product();
            (n, n)
        }
    };
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-r..=r)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}
