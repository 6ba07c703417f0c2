use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::ParamGrads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Normal with std `1/sqrt(fan_in)` where fan-in is the row count.
    Xavier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
}

fn default_lr() -> f64 {
    6e-5
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_wd() -> f64 {
    0.01
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_wd(),
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig { lr, ..Self::default() }
    }
}

/// Storage precision of trainable values between optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Values are rounded to `f32` after every update; arithmetic stays 64-bit.
    F32,
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named trainable tensors plus AdamW moment estimates.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Returns the id of `name`, creating it with `init` when absent. An
    /// existing parameter must have the requested shape.
    pub fn get_or_init<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        if let Some(&id) = self.index.get(name) {
            let have = self.params[id.0].value.shape();
            if have != [rows, cols] {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {have:?}, model expects [{rows}, {cols}]"
                )));
            }
            return Ok(id);
        }
        let value = match init {
            Init::Zeros => Tensor::zeros(rows, cols),
            Init::Const(c) => Tensor::filled(rows, cols, c),
            Init::Normal(std) => normal_tensor(rows, cols, std, rng),
            Init::Xavier => normal_tensor(rows, cols, 1.0 / (rows as f64).sqrt(), rng),
        };
        Ok(self.insert(name, value))
    }

    /// Adds a parameter with a given value. Panics if the name is taken.
    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        let (r, c) = (value.rows(), value.cols());
        self.params.push(Param {
            name: name.to_string(),
            value,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Keeps only parameters whose name starts with `prefix`, dropping
    /// optimizer state. Ids are reassigned.
    pub fn retain_prefix(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for p in &self.params {
            if p.name.starts_with(prefix) {
                out.insert(&p.name, p.value.clone());
            }
        }
        out
    }

    /// One decoupled-weight-decay Adam update. Parameters without a gradient
    /// are left untouched, moments and decay included.
    pub fn adamw_step(&mut self, grads: &ParamGrads, cfg: &AdamWConfig, precision: Precision) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in self.params.iter_mut().enumerate() {
            let Some(g) = grads.0.get(i).and_then(Option::as_ref) else { continue };
            let value = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for k in 0..value.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g.data()[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g.data()[k] * g.data()[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                value[k] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * value[k]);
                if precision == Precision::F32 {
                    value[k] = value[k] as f32 as f64;
                }
            }
        }
    }

    /// Rounds every value to `f32`.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            for x in p.value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}

pub fn normal_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(rows, cols, data)
}
