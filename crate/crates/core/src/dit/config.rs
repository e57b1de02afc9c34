use serde::{Deserialize, Serialize};

use crate::attention::AttentionMode;
use crate::camera::{Composition, NormalizationPolicy};
use crate::error::{Error, Result};
use crate::rope::{AxisPartition, RopeConfig};

/// How the camera columns of the query/key projections start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Query camera columns zero, key camera columns copied from the leading
    /// rotary columns of the same head. The camera logit term is exactly
    /// zero at initialization but both sides receive gradient after one step.
    Zero,
    /// Query and key camera columns copied from the first `d_c` temporal
    /// columns of the same head. Requires a temporal share of at least `d_c`.
    #[default]
    Copy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Rotary dimension per head.
    pub head_dim: usize,
    /// Camera dimension per head (multiple of 4, may be 0).
    pub camera_dim: usize,
    pub mlp_ratio: usize,
    /// Latent channels per token.
    pub channels: usize,
    /// Sinusoidal features of the flow time, even.
    pub time_features: usize,
    pub init: InitStrategy,
    pub attention: AttentionMode,
    #[serde(default = "default_theta")]
    pub theta_base: f64,
    #[serde(default)]
    pub variant: Composition,
    #[serde(default)]
    pub partition: Option<AxisPartition>,
    pub normalization: NormalizationPolicy,
    /// RMS-normalize the residual stream before the output head.
    #[serde(default = "default_true")]
    pub final_norm: bool,
}

fn default_theta() -> f64 {
    10_000.0
}

fn default_true() -> bool {
    true
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            layers: 2,
            heads: 2,
            head_dim: 32,
            camera_dim: 8,
            mlp_ratio: 2,
            channels: 1,
            time_features: 16,
            init: InitStrategy::Copy,
            attention: AttentionMode::StereoDecomposed,
            theta_base: default_theta(),
            variant: Composition::Inverse,
            partition: None,
            normalization: NormalizationPolicy::Normalized { scene_scale: 1.0 },
            final_norm: true,
        }
    }
}

impl ToyModelConfig {
    /// Residual stream width, `heads · head_dim`.
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn hidden(&self) -> usize {
        self.mlp_ratio * self.width()
    }

    pub fn rope_config(&self) -> Result<RopeConfig> {
        let mut cfg = RopeConfig::new(self.head_dim, self.camera_dim)?;
        cfg.theta_base = self.theta_base;
        cfg.variant = self.variant;
        if let Some(p) = self.partition {
            cfg.partition = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same model without camera dims.
    pub fn without_camera(&self) -> Self {
        ToyModelConfig {
            camera_dim: 0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.channels == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("model: heads, head_dim, channels and mlp_ratio must be positive"));
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::invalid("model: time_features must be positive and even"));
        }
        let rope = self.rope_config()?;
        if self.camera_dim > 0 {
            match self.init {
                InitStrategy::Copy if rope.partition.t < self.camera_dim => {
                    return Err(Error::invalid(format!(
                        "copy init needs a temporal share >= camera_dim ({} < {})",
                        rope.partition.t, self.camera_dim
                    )))
                }
                InitStrategy::Zero if self.head_dim < self.camera_dim => {
                    return Err(Error::invalid("zero init needs head_dim >= camera_dim"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ToyModelConfig::default();
        c.validate().unwrap();
        let r = c.rope_config().unwrap();
        assert_eq!((r.partition.t, r.partition.x, r.partition.y), (12, 10, 10));
        assert_eq!(c.width(), 64);
    }

    #[test]
    fn copy_init_needs_temporal_share() {
        let c = ToyModelConfig {
            head_dim: 12,
            camera_dim: 8,
            ..Default::default()
        };
        // partition for 12 is t=4, x=4, y=4
        assert!(c.validate().is_err());
        let z = ToyModelConfig {
            init: InitStrategy::Zero,
            ..c
        };
        z.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_fields() {
        let mut v = serde_json::to_value(ToyModelConfig::default()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ToyModelConfig>(v).is_err());
    }
}
