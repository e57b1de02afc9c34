//! Checkpoint directories.
//!
//! ```text
//! manifest.json        config, config hash, dtype, step, optimizer state
//! params/<name>.swt    one tensor file per parameter
//! adam_m/<name>.swt    first moments
//! adam_v/<name>.swt    second moments
//! ```
//!
//! Every file is written to a temporary name and renamed into place; the
//! manifest is written last.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{encode, read_file, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar};

use super::model::ToyModel;
use super::params::{parameter_layout, ModelParams};
use super::train::{Adam, TrainConfig, Trainer};

pub const FORMAT: &str = "stereoworld-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dtype: DType,
    pub step: usize,
    pub config: TrainConfig,
    pub config_sha256: String,
    pub parameters: Vec<String>,
    pub adam_t: u64,
}

fn write_set<T: Scalar>(dir: &Path, sub: &str, set: &ModelParams<T>) -> Result<()> {
    let d = dir.join(sub);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    for (name, t) in &set.tensors {
        write_atomic(&d.join(format!("{name}.swt")), &encode(t))?;
    }
    Ok(())
}

fn read_set<T: Scalar>(dir: &Path, sub: &str, names: &[String]) -> Result<ModelParams<T>> {
    let mut set = ModelParams::default();
    for name in names {
        let any = read_file(&dir.join(sub).join(format!("{name}.swt")))?;
        if any.dtype() != T::DTYPE {
            return Err(Error::Format(format!("{sub}/{name}: stored as {}", any.dtype().as_str())));
        }
        set.insert(name.clone(), any.into_array());
    }
    Ok(set)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format {:?}", m.format)));
    }
    if m.config.hash() != m.config_sha256 {
        return Err(Error::Format("checkpoint config does not match its hash".into()));
    }
    Ok(m)
}

impl<T: Scalar> Trainer<T> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_set(dir, "params", &self.model.params)?;
        write_set(dir, "adam_m", &self.adam.m)?;
        write_set(dir, "adam_v", &self.adam.v)?;
        let manifest = Manifest {
            format: FORMAT.to_string(),
            dtype: T::DTYPE,
            step: self.step_count(),
            config: self.config().clone(),
            config_sha256: self.config().hash(),
            parameters: self.model.params.names().map(str::to_string).collect(),
            adam_t: self.adam.t,
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&dir.join("manifest.json"), json.as_bytes())
    }

    /// Restores parameters, optimizer moments and step count.
    pub fn resume(dir: &Path) -> Result<Self> {
        let m = read_manifest(dir)?;
        if m.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, requested {}",
                m.dtype.as_str(),
                T::DTYPE.as_str()
            )));
        }
        let layout = parameter_layout(&m.config.model);
        if m.parameters.len() != layout.len() || !m.parameters.iter().all(|n| layout.contains_key(n)) {
            return Err(Error::Format("checkpoint parameter list does not match its config".into()));
        }
        let params = read_set::<T>(dir, "params", &m.parameters)?;
        let model = ToyModel::new(m.config.model.clone(), params)?;
        let mut adam = Adam::new(&model.params, m.config.learning_rate);
        adam.m = read_set(dir, "adam_m", &m.parameters)?;
        adam.v = read_set(dir, "adam_v", &m.parameters)?;
        adam.m.check_layout(&layout)?;
        adam.v.check_layout(&layout)?;
        adam.t = m.adam_t;
        Ok(Trainer::from_parts(m.config, model, adam, m.step))
    }
}

/// Loads only the model weights.
pub fn load_model<T: Scalar>(dir: &Path) -> Result<ToyModel<T>> {
    let m = read_manifest(dir)?;
    if m.dtype != T::DTYPE {
        return Err(Error::Format(format!("checkpoint holds {} tensors", m.dtype.as_str())));
    }
    let params = read_set::<T>(dir, "params", &m.parameters)?;
    ToyModel::new(m.config.model, params)
}
