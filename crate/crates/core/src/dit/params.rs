use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Array, Scalar};

use super::config::{InitStrategy, ToyModelConfig};

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams<T> {
    pub tensors: BTreeMap<String, Array<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn get(&self, name: &str) -> Result<&Array<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) {
        self.tensors.insert(name.into(), value);
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Array::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Array::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Fails unless names and shapes equal `expected`.
    pub fn check_layout(&self, expected: &BTreeMap<String, Vec<usize>>) -> Result<()> {
        if self.tensors.len() != expected.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter {name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn block_name(layer: usize, part: &str) -> String {
    format!("blocks.{layer}.{part}")
}

/// Name → shape of every parameter of a model built from `cfg`.
pub fn parameter_layout(cfg: &ToyModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.width();
    let m = cfg.hidden();
    let hq = cfg.heads * (cfg.head_dim + cfg.camera_dim);
    let hv = cfg.heads * cfg.head_dim;
    let mut out = BTreeMap::new();
    out.insert("embed.w".to_string(), vec![cfg.channels + 1, d]);
    out.insert("prompt".to_string(), vec![1, d]);
    out.insert("time.w".to_string(), vec![cfg.time_features, d]);
    out.insert("time.b".to_string(), vec![1, d]);
    for l in 0..cfg.layers {
        out.insert(block_name(l, "attn.wq"), vec![d, hq]);
        out.insert(block_name(l, "attn.wk"), vec![d, hq]);
        out.insert(block_name(l, "attn.wv"), vec![d, hv]);
        out.insert(block_name(l, "attn.wo"), vec![hv, d]);
        out.insert(block_name(l, "mlp.w1"), vec![d, m]);
        out.insert(block_name(l, "mlp.b1"), vec![1, m]);
        out.insert(block_name(l, "mlp.w2"), vec![m, d]);
        out.insert(block_name(l, "mlp.b2"), vec![1, d]);
    }
    out.insert("out.w".to_string(), vec![d, cfg.channels]);
    out.insert("out.b".to_string(), vec![1, cfg.channels]);
    out
}

/// Parameters of the camera-free model, drawn in a fixed order from `seed`.
/// Independent of `camera_dim`, so expanded and baseline models built from
/// one seed share every weight they have in common.
fn base_params<T: Scalar>(cfg: &ToyModelConfig, seed: u64) -> ModelParams<T> {
    let base = cfg.without_camera();
    let mut rng = Rng::new(seed).fork(0);
    let layout = parameter_layout(&base);
    let mut p = ModelParams::default();
    for (name, shape) in &layout {
        let fan_in = shape[0] as f64;
        let std = if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            0.0
        } else if name == "prompt" {
            0.1
        } else if name == "out.w" {
            0.1 / fan_in.sqrt()
        } else if name.ends_with("attn.wo") || name.ends_with("mlp.w2") {
            0.5 / fan_in.sqrt()
        } else {
            1.0 / fan_in.sqrt()
        };
        let t = if std == 0.0 {
            Array::zeros(shape)
        } else {
            rng.normal_array(shape, std)
        };
        p.insert(name.clone(), t);
    }
    p
}

/// Widens a `D × heads·d` query/key projection to `D × heads·(d + d_c)`.
/// `source` picks the per-head columns copied into the camera slots; `None`
/// leaves them zero.
fn widen<T: Scalar>(w: &Array<T>, heads: usize, d: usize, d_c: usize, source: Option<usize>) -> Array<T> {
    let rows = w.shape()[0];
    let wide = d + d_c;
    let mut out = Array::zeros(&[rows, heads * wide]);
    for r in 0..rows {
        let src = w.row(r);
        let dst = out.row_mut(r);
        for h in 0..heads {
            dst[h * wide..h * wide + d].copy_from_slice(&src[h * d..(h + 1) * d]);
            if let Some(start) = source {
                dst[h * wide + d..(h + 1) * wide].copy_from_slice(&src[h * d + start..h * d + start + d_c]);
            }
        }
    }
    out
}

/// Deterministic initialization. Camera columns follow `cfg.init`.
pub fn init_params<T: Scalar>(cfg: &ToyModelConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut p = base_params::<T>(cfg, seed);
    if cfg.camera_dim > 0 {
        let (q_src, k_src) = match cfg.init {
            InitStrategy::Zero => (None, Some(0)),
            // temporal block is first in [t | x | y]
            InitStrategy::Copy => (Some(0), Some(0)),
        };
        for l in 0..cfg.layers {
            for (part, src) in [("attn.wq", q_src), ("attn.wk", k_src)] {
                let name = block_name(l, part);
                let w = widen(p.get(&name)?, cfg.heads, cfg.head_dim, cfg.camera_dim, src);
                p.insert(name, w);
            }
        }
    }
    p.check_layout(&parameter_layout(cfg))?;
    Ok(p)
}
