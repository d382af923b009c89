use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    tensor: Tensor,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
}

/// Named trainable parameters together with their Adam moment estimates.
///
/// Iteration order is the lexicographic order of names, which keeps every
/// reduction over parameters deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step_count: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter name `{name}`")));
        }
        let n = tensor.numel();
        self.slots.insert(
            name,
            Slot {
                tensor,
                adam_m: vec![0.0; n],
                adam_v: vec![0.0; n],
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.tensor)
            .ok_or_else(|| Error::Internal(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.tensor)
            .ok_or_else(|| Error::Internal(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.tensor))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.tensor.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn adam_moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.slots
            .get(name)
            .map(|s| (s.adam_m.as_slice(), s.adam_v.as_slice()))
    }

    /// Writes `grads` into the gradient buffer of each named parameter.
    pub fn set_gradients(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let slot = self
                .slots
                .get_mut(name)
                .ok_or_else(|| Error::Internal(format!("gradient for unknown parameter `{name}`")))?;
            slot.tensor.set_grad(g.to_vec())?;
        }
        Ok(())
    }

    /// One Adam step over every parameter.
    ///
    /// Weight decay enters as an L2 term on the gradient before the moment
    /// update. Gradients are consumed.
    pub fn adam_update(&mut self, opt: &AdamConfig, weight_decay: f64) -> Result<()> {
        if let Some((name, _)) = self.slots.iter().find(|(_, s)| s.tensor.grad().is_none()) {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for slot in self.slots.values_mut() {
            let grad = slot.tensor.take_grad().expect("checked above");
            let Slot {
                tensor,
                adam_m,
                adam_v,
            } = slot;
            let values = tensor.values_mut();
            for i in 0..values.len() {
                let g = grad[i] + weight_decay * values[i];
                adam_m[i] = opt.beta1 * adam_m[i] + (1.0 - opt.beta1) * g;
                adam_v[i] = opt.beta2 * adam_v[i] + (1.0 - opt.beta2) * g * g;
                let m_hat = adam_m[i] / bc1;
                let v_hat = adam_v[i] / bc2;
                values[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradient buffers keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero buffers shaped like every parameter in `store`.
    pub fn zeros_like(store: &ParamStore) -> Self {
        let entries = store
            .iter()
            .map(|(k, t)| (k.to_string(), vec![0.0; t.numel()]))
            .collect();
        Self { entries }
    }

    pub fn add(&mut self, name: &str, delta: &[f64]) {
        match self.entries.get_mut(name) {
            Some(g) => {
                debug_assert_eq!(g.len(), delta.len());
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => {
                self.entries.insert(name.to_string(), delta.to_vec());
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (k, v) in other.iter() {
            self.add(k, v);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.entries.values_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().flat_map(|g| g.iter()).all(|x| x.is_finite())
    }
}
