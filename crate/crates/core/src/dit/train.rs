use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::TokenGrid;
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, max_threads};
use crate::rng::Rng;
use crate::tensor::{Array, DType, Scalar};

use super::config::ToyModelConfig;
use super::flow::{draw_state, masked_mse, noisy_grid, FlowState};
use super::model::ToyModel;
use super::params::ModelParams;
use super::scene::{generate_scene, SceneConfig};

const TRAIN_STREAM: u64 = 1 << 40;
const HELD_OUT_STREAM: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Leading frames given clean to the model.
    pub cond_frames: usize,
    /// Number of held-out scenes used for evaluation.
    pub held_out: usize,
    /// Noise/time draws per held-out scene.
    pub held_out_draws: usize,
    pub dtype: DType,
    pub model: ToyModelConfig,
    pub scene: SceneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 2000,
            batch_size: 4,
            learning_rate: 1e-3,
            cond_frames: 1,
            held_out: 16,
            held_out_draws: 4,
            dtype: DType::F32,
            model: ToyModelConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scene.validate()?;
        if self.model.channels != self.scene.channels {
            return Err(Error::invalid("model and scene channel counts differ"));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::invalid("batch_size and learning_rate must be positive"));
        }
        if self.cond_frames >= self.scene.frames {
            return Err(Error::invalid("cond_frames must leave at least one generated frame"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Adam with bias correction and a constant learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ModelParams<T>, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
        self.t += 1;
        let b1 = T::of_f64(self.beta1);
        let b2 = T::of_f64(self.beta2);
        let c1 = T::of_f64(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::of_f64(self.lr);
        let eps = T::of_f64(self.eps);
        for (name, p) in params.tensors.iter_mut() {
            let g = grads.get(name)?;
            let m = self.m.tensors.get_mut(name).expect("moments match params");
            let v = self.v.tensors.get_mut(name).expect("moments match params");
            if g.shape() != p.shape() {
                return Err(Error::invalid(format!("gradient shape mismatch for {name}")));
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mh = *mv / c1;
                let vh = *vv / c2;
                *pv -= lr * mh / (vh.sqrt() + eps);
            }
            p.ensure_finite("adam update")?;
        }
        Ok(())
    }
}

/// One training or evaluation example: clean grid plus a noise/time draw.
pub struct Example<T> {
    pub clean: TokenGrid<T>,
    pub state: FlowState<T>,
}

fn example<T: Scalar>(rng: &mut Rng, cfg: &TrainConfig) -> Result<Example<T>> {
    let scene = generate_scene(rng, &cfg.scene)?;
    let clean = scene.grid(cfg.model.normalization)?;
    let state = draw_state(rng, &clean)?;
    Ok(Example { clean, state })
}

/// Loss and parameter gradients of `model` on one example.
pub fn loss_and_grad<T: Scalar>(
    model: &ToyModel<T>,
    ex: &Example<T>,
    cond_frames: usize,
) -> Result<(f64, ModelParams<T>)> {
    let input = noisy_grid(&ex.clean, &ex.state, cond_frames)?;
    let (v, tape) = model.forward_taped(&input, ex.state.t, cond_frames, None)?;
    let (loss, d_v) = masked_mse(&v, &ex.state.target()?, cond_frames)?;
    Ok((loss, model.backward(&tape, &d_v)?))
}

pub fn example_loss<T: Scalar>(model: &ToyModel<T>, ex: &Example<T>, cond_frames: usize) -> Result<f64> {
    let input = noisy_grid(&ex.clean, &ex.state, cond_frames)?;
    let v = model.forward(&input, ex.state.t, cond_frames)?;
    Ok(masked_mse(&v, &ex.state.target()?, cond_frames)?.0)
}

/// Deterministic trainer: example `i` of step `s` is drawn from its own
/// random stream, so a resumed run sees exactly the data it would have seen.
pub struct Trainer<T> {
    config: TrainConfig,
    pub model: ToyModel<T>,
    pub adam: Adam<T>,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.dtype != T::DTYPE {
            return Err(Error::invalid(format!(
                "config dtype {} does not match trainer element type {}",
                config.dtype.as_str(),
                T::DTYPE.as_str()
            )));
        }
        let model = ToyModel::init(config.model.clone(), config.seed)?;
        let adam = Adam::new(&model.params, config.learning_rate);
        Ok(Trainer {
            config,
            model,
            adam,
            step: 0,
        })
    }

    pub(crate) fn from_parts(config: TrainConfig, model: ToyModel<T>, adam: Adam<T>, step: usize) -> Self {
        Trainer {
            config,
            model,
            adam,
            step,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed steps.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn train_example(&self, step: usize, i: usize) -> Result<Example<T>> {
        let stream = TRAIN_STREAM + (step * self.config.batch_size + i) as u64;
        example(&mut Rng::new(self.config.seed).fork(stream), &self.config)
    }

    pub fn held_out_example(&self, scene: usize, draw: usize) -> Result<Example<T>> {
        let stream = HELD_OUT_STREAM + (scene * self.config.held_out_draws.max(1) + draw) as u64;
        let mut rng = Rng::new(self.config.seed).fork(stream);
        example(&mut rng, &self.config)
    }

    /// One optimizer step; returns the mean batch loss. Examples are
    /// processed on up to [`max_threads`] workers and reduced in index order.
    pub fn step(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        let results = map_indexed(b, max_threads(), |i| -> Result<(f64, ModelParams<T>)> {
            let ex = self.train_example(self.step, i)?;
            loss_and_grad(&self.model, &ex, self.config.cond_frames)
        });
        let mut total = 0.0;
        let mut grads: Option<ModelParams<T>> = None;
        for r in results {
            let (loss, g) = r?;
            total += loss;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (name, t) in acc.tensors.iter_mut() {
                        t.axpy(T::one(), g.get(name)?)?;
                    }
                }
            }
        }
        let mut grads = grads.expect("batch_size > 0");
        let inv = T::of_f64(1.0 / b as f64);
        for t in grads.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        self.adam.update(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(total / b as f64)
    }

    /// Runs until `until` steps are complete, calling `on_step` after each.
    pub fn run_until<F: FnMut(&LogRecord) -> Result<()>>(&mut self, until: usize, mut on_step: F) -> Result<Vec<LogRecord>> {
        let start = Instant::now();
        let mut log = Vec::new();
        while self.step < until {
            let loss = self.step()?;
            let rec = LogRecord {
                step: self.step,
                loss,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            on_step(&rec)?;
            log.push(rec);
        }
        Ok(log)
    }

    /// Mean flow loss over the held-out scenes and draws.
    pub fn held_out_loss(&self) -> Result<f64> {
        let (n, k) = (self.config.held_out, self.config.held_out_draws.max(1));
        if n == 0 {
            return Err(Error::invalid("no held-out scenes configured"));
        }
        let losses = map_indexed(n * k, max_threads(), |i| {
            example_loss(&self.model, &self.held_out_example(i / k, i % k)?, self.config.cond_frames)
        });
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / (n * k) as f64)
    }
}

/// Worst relative error between analytic and central-difference gradients
/// of the flow loss, over sampled parameter entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_parameter: String,
}

/// Compares gradients on `probes` entries per tensor (all entries when the
/// tensor is smaller). Runs in 64-bit.
pub fn gradient_check(
    model: &ToyModel<f64>,
    ex: &Example<f64>,
    cond_frames: usize,
    probes: usize,
    rng: &mut Rng,
    eps: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(model, ex, cond_frames)?;
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_parameter: String::new(),
    };
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let mut m = model.clone();
    for name in names {
        let base = model.params.get(&name)?.clone();
        let n = base.len();
        let picks: Vec<usize> = if n <= probes {
            (0..n).collect()
        } else {
            (0..probes).map(|_| rng.below(n)).collect()
        };
        for idx in picks {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut p: Array<f64> = base.clone();
                p.data_mut()[idx] += delta;
                m.params.insert(name.clone(), p);
                example_loss(&m, ex, cond_frames)
            };
            let fd = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let an = grads.get(&name)?.data()[idx];
            let err = crate::gradcheck::rel_error(an, fd, 1e-6);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_parameter = format!("{name}[{idx}]");
            }
        }
        m.params.insert(name.clone(), base);
    }
    Ok(report)
}
