//! Named parameter store with adaptive moment-estimation updates.
//!
//! Parameters are flat named tensors grouped by learning-rate class. Each
//! training step binds a subset of them onto a fresh tape as leaf vars,
//! builds the graph, and feeds the resulting gradients back through
//! `apply_step`. Updates with non-finite gradients are skipped and counted.

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrGroup {
    HashTable,
    Mlp,
    StaticField,
    Refiner,
}

#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub hash_table: f64,
    pub mlp: f64,
    pub static_field: f64,
    pub refiner: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            hash_table: 1e-2,
            mlp: 1e-3,
            static_field: 1e-3,
            refiner: 1e-3,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, group: LrGroup) -> f64 {
        match group {
            LrGroup::HashTable => self.hash_table,
            LrGroup::Mlp => self.mlp,
            LrGroup::StaticField => self.static_field,
            LrGroup::Refiner => self.refiner,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update on a single tensor. `t` is the 1-based step count for this
/// tensor (used for bias correction).
pub fn adam_step(
    value: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (md, vd, xd) = (m.data_mut(), v.data_mut(), value.data_mut());
    for i in 0..xd.len() {
        let g = grad.data()[i];
        md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g;
        vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = md[i] / bc1;
        let vhat = vd[i] / bc2;
        xd[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

struct ParamEntry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
    t: u64,
    group: LrGroup,
}

#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    skipped_updates: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor, group: LrGroup) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        let shape = value.shape().to_vec();
        self.index.insert(name.to_string(), self.entries.len());
        self.names.push(name.to_string());
        self.entries.push(ParamEntry {
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            t: 0,
            group,
        });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[idx].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[idx].value
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        let cur = self.get_mut(name);
        assert_eq!(cur.shape(), value.shape(), "set {name}: shape mismatch");
        *cur = value;
    }

    pub fn group_of(&self, name: &str) -> LrGroup {
        self.entries[self.index[name]].group
    }

    /// Names in registration order (checkpoint order).
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.names
            .iter()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn skipped_updates(&self) -> u64 {
        self.skipped_updates
    }

    /// Bind every parameter matching one of `prefixes` (empty = all) onto the
    /// tape as trainable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape, prefixes: &[&str]) -> Binding<'t> {
        let mut vars = HashMap::new();
        for (name, entry) in self.names.iter().zip(&self.entries) {
            if prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p)) {
                vars.insert(name.clone(), tape.leaf_param(entry.value.clone()));
            }
        }
        Binding { vars }
    }

    /// Apply one Adam step to every bound parameter that received a gradient.
    /// Tensors whose gradients contain non-finite values are skipped and the
    /// warning counter incremented.
    pub fn apply_step(
        &mut self,
        binding: &Binding<'_>,
        grads: &Gradients,
        lrs: &LrSchedule,
        cfg: &AdamConfig,
    ) {
        // Fixed iteration order keeps updates bit-deterministic.
        for i in 0..self.entries.len() {
            let name = self.names[i].clone();
            let Some(var) = binding.vars.get(&name) else {
                continue;
            };
            let Some(grad) = grads.get(*var) else {
                continue;
            };
            if !grad.is_finite() {
                self.skipped_updates += 1;
                continue;
            }
            let entry = &mut self.entries[i];
            entry.t += 1;
            let lr = lrs.rate(entry.group);
            adam_step(
                &mut entry.value,
                grad,
                &mut entry.m,
                &mut entry.v,
                entry.t,
                lr,
                cfg,
            );
        }
    }
}

/// Parameters materialized as leaf vars on one tape.
pub struct Binding<'t> {
    vars: HashMap<String, Var<'t>>,
}

impl<'t> Binding<'t> {
    pub fn var(&self, name: &str) -> Var<'t> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var<'t>> {
        self.vars.get(name).copied()
    }
}
