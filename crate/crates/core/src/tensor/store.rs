use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// One named parameter with an optional accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    /// Non-trainable entries (fixed positional tables) are serialized and
    /// registered on tapes but skipped by optimizers and the grad checker.
    pub trainable: bool,
}

/// Named map of parameters. Iteration order is the sorted name order,
/// which keeps every consumer deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries
            .insert(name.into(), Param { value, grad: None, trainable: true });
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries
            .insert(name.into(), Param { value, grad: None, trainable: false });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| CoreError::MissingParam { name: name.to_string() })
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| CoreError::MissingParam { name: name.to_string() })?;
        p.value = value;
        Ok(())
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Total number of scalar coordinates across trainable parameters.
    pub fn trainable_numel(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Accumulate a gradient contribution; the slot keeps the parameter shape.
    pub fn add_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| CoreError::MissingParam { name: name.to_string() })?;
        if grad.len() != p.value.numel() {
            return Err(CoreError::contract(
                "add_grad",
                format!("{name}: grad has {} values, param has {}", grad.len(), p.value.numel()),
            ));
        }
        let slot = p.grad.get_or_insert_with(|| vec![0.0; grad.len()]);
        for (s, &g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
        Ok(())
    }

    /// Copy with one coordinate of one parameter nudged by `delta`.
    pub fn with_nudged(&self, name: &str, index: usize, delta: f64) -> Result<Self> {
        let mut out = self.clone();
        let p = out
            .entries
            .get_mut(name)
            .ok_or_else(|| CoreError::MissingParam { name: name.to_string() })?;
        p.value = p.value.with_nudged(index, delta);
        Ok(out)
    }
}
