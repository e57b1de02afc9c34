use crate::attention::{layer_backward, layer_forward, AttentionParams, Branch, GridDims, LayerTape, TokenGrid};
use crate::error::{Error, Result};
use crate::flops::MacCounter;
use crate::rope::{RopeConfig, RopeTables};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Array, Scalar};

use super::config::ToyModelConfig;
use super::flow::VelocityField;
use super::params::{block_name, init_params, parameter_layout, ModelParams};

const NORM_EPS: f64 = 1e-6;

/// Pre-norm transformer over the tokens of a stereo latent grid, predicting
/// a velocity per token.
///
/// Token input is `[latent channels | conditioning flag]`. A learned prompt
/// vector and an embedding of the flow time are added to every token. Each
/// block is `h += attn(norm(h)); h += mlp(norm(h))` with the attention
/// pattern selected by the config; norms are parameter-free RMS norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    config: ToyModelConfig,
    rope: RopeConfig,
    pub params: ModelParams<T>,
}

struct NormTape<T> {
    y: Array<T>,
    inv_rms: Vec<T>,
}

struct BlockTape<T> {
    attn_norm: NormTape<T>,
    attn: LayerTape<T>,
    mlp_norm: NormTape<T>,
    pre: Array<T>,
    act: Array<T>,
}

/// Intermediate values of one forward pass, consumed by [`ToyModel::backward`].
pub struct ForwardTape<T> {
    x_in: Array<T>,
    time_feats: Array<T>,
    blocks: Vec<BlockTape<T>>,
    attn_params: Vec<AttentionParams<T>>,
    final_norm: Option<NormTape<T>>,
    head_in: Array<T>,
    tables: RopeTables<T>,
}

fn rms_norm<T: Scalar>(x: &Array<T>) -> (Array<T>, NormTape<T>) {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let mut y = x.clone();
    let mut inv_rms = Vec::with_capacity(n);
    let cf = T::from_usize(c);
    let eps = T::of_f64(NORM_EPS);
    for i in 0..n {
        let row = y.row_mut(i);
        let ms = row.iter().map(|&v| v * v).sum::<T>() / cf;
        let r = T::one() / (ms + eps).sqrt();
        row.iter_mut().for_each(|v| *v *= r);
        inv_rms.push(r);
    }
    (y.clone(), NormTape { y, inv_rms })
}

fn rms_norm_backward<T: Scalar>(tape: &NormTape<T>, dy: &Array<T>) -> Array<T> {
    let c = dy.shape()[1];
    let cf = T::from_usize(c);
    let mut dx = dy.clone();
    for (i, &r) in tape.inv_rms.iter().enumerate() {
        let y = tape.y.row(i);
        let row = dx.row_mut(i);
        let mean: T = row.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / cf;
        for (d, &yv) in row.iter_mut().zip(y) {
            *d = (*d - yv * mean) * r;
        }
    }
    dx
}

fn add_row<T: Scalar>(x: &mut Array<T>, row: &Array<T>) {
    let b = row.data();
    let c = b.len();
    for chunk in x.data_mut().chunks_exact_mut(c) {
        for (v, &bv) in chunk.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn col_sum<T: Scalar>(x: &Array<T>) -> Array<T> {
    let c = x.shape()[1];
    let mut out = Array::zeros(&[1, c]);
    for chunk in x.data().chunks_exact(c) {
        for (o, &v) in out.data_mut().iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `[sin(ω_k t), cos(ω_k t)]` with `ω_k = π·2^(k-1)`.
pub fn time_features(t: f64, n: usize) -> Vec<f64> {
    let half = n / 2;
    let omegas = (0..half).map(|k| std::f64::consts::PI * 2f64.powi(k as i32 - 1));
    let (s, c): (Vec<f64>, Vec<f64>) = omegas.map(|w| ((w * t).sin(), (w * t).cos())).unzip();
    s.into_iter().chain(c).collect()
}

impl<T: Scalar> ToyModel<T> {
    pub fn new(config: ToyModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_layout(&parameter_layout(&config))?;
        let rope = config.rope_config()?;
        Ok(ToyModel { config, rope, params })
    }

    /// Freshly initialized model; see [`init_params`].
    pub fn init(config: ToyModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        ToyModel::new(config, params)
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn rope(&self) -> &RopeConfig {
        &self.rope
    }

    /// Same weights, different attention pattern.
    pub fn with_attention(mut self, mode: crate::attention::AttentionMode) -> Self {
        self.config.attention = mode;
        self
    }

    fn attn_params(&self, layer: usize) -> Result<AttentionParams<T>> {
        Ok(AttentionParams {
            wq: self.params.get(&block_name(layer, "attn.wq"))?.clone(),
            wk: self.params.get(&block_name(layer, "attn.wk"))?.clone(),
            wv: self.params.get(&block_name(layer, "attn.wv"))?.clone(),
            wo: self.params.get(&block_name(layer, "attn.wo"))?.clone(),
            heads: self.config.heads,
            d: self.config.head_dim,
            d_c: self.config.camera_dim,
        })
    }

    fn input_rows(&self, grid: &TokenGrid<T>, cond_frames: usize) -> Result<Array<T>> {
        let dims = grid.dims();
        if dims.c != self.config.channels {
            return Err(Error::invalid(format!(
                "model expects {} channels, grid has {}",
                self.config.channels, dims.c
            )));
        }
        if cond_frames > dims.f {
            return Err(Error::invalid("more conditioning frames than frames"));
        }
        let c = dims.c;
        let feats = grid.features();
        let mut x = Array::zeros(&[dims.tokens(), c + 1]);
        for i in 0..dims.tokens() {
            let (_, t, _, _) = dims.coords(i);
            let row = x.row_mut(i);
            row[..c].copy_from_slice(feats.row(i));
            row[c] = if t < cond_frames { T::one() } else { T::zero() };
        }
        Ok(x)
    }

    /// Velocity for every token, shaped like the grid.
    pub fn forward(&self, grid: &TokenGrid<T>, t: f64, cond_frames: usize) -> Result<Array<T>> {
        Ok(self.forward_taped(grid, t, cond_frames, None)?.0)
    }

    /// Forward pass that keeps what the backward pass needs. Attention score
    /// and value products are reported to `counter`.
    pub fn forward_taped(
        &self,
        grid: &TokenGrid<T>,
        t: f64,
        cond_frames: usize,
        counter: Option<&MacCounter>,
    ) -> Result<(Array<T>, ForwardTape<T>)> {
        let dims: GridDims = grid.dims();
        let x_in = self.input_rows(grid, cond_frames)?;
        let tables = RopeTables::new(&grid.positions(), &self.rope)?;
        let frames = grid.frames();
        let branch = Branch::from(self.config.attention);
        let p = &self.params;

        let feats: Vec<T> = time_features(t, self.config.time_features)
            .into_iter()
            .map(T::of_f64)
            .collect();
        let time_feats = Array::from_vec(&[1, feats.len()], feats)?;
        let mut temb = matmul(&time_feats, p.get("time.w")?)?;
        temb.axpy(T::one(), p.get("time.b")?)?;

        let mut h = matmul(&x_in, p.get("embed.w")?)?;
        add_row(&mut h, p.get("prompt")?);
        add_row(&mut h, &temb);

        let mut blocks = Vec::with_capacity(self.config.layers);
        let mut attn_params = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let ap = self.attn_params(l)?;
            let (a, attn_norm) = rms_norm(&h);
            let (y, attn) = layer_forward(&a, &ap, &tables, &frames, &dims, branch, counter)?;
            h.axpy(T::one(), &y)?;

            let (m, mlp_norm) = rms_norm(&h);
            let mut pre = matmul(&m, p.get(&block_name(l, "mlp.w1"))?)?;
            add_row(&mut pre, p.get(&block_name(l, "mlp.b1"))?);
            let act = pre.map(|v| v * sigmoid(v));
            let mut o = matmul(&act, p.get(&block_name(l, "mlp.w2"))?)?;
            add_row(&mut o, p.get(&block_name(l, "mlp.b2"))?);
            h.axpy(T::one(), &o)?;

            blocks.push(BlockTape {
                attn_norm,
                attn,
                mlp_norm,
                pre,
                act,
            });
            attn_params.push(ap);
        }

        let (head_in, final_norm) = if self.config.final_norm {
            let (y, tape) = rms_norm(&h);
            (y, Some(tape))
        } else {
            (h, None)
        };
        let mut v = matmul(&head_in, p.get("out.w")?)?;
        add_row(&mut v, p.get("out.b")?);
        v.ensure_finite("model forward")?;
        let v = v.reshape(&dims.shape())?;
        Ok((
            v,
            ForwardTape {
                x_in,
                time_feats,
                blocks,
                attn_params,
                final_norm,
                head_in,
                tables,
            },
        ))
    }

    /// Parameter gradients given `dL/dv` (shaped like the forward output).
    pub fn backward(&self, tape: &ForwardTape<T>, d_v: &Array<T>) -> Result<ModelParams<T>> {
        let p = &self.params;
        let n = tape.x_in.shape()[0];
        let d_v = d_v.clone().reshape(&[n, self.config.channels])?;
        let mut g = ModelParams::default();

        g.insert("out.w", matmul_tn(&tape.head_in, &d_v)?);
        g.insert("out.b", col_sum(&d_v));
        let mut dh = matmul_nt(&d_v, p.get("out.w")?)?;
        if let Some(nt) = &tape.final_norm {
            dh = rms_norm_backward(nt, &dh);
        }

        for l in (0..self.config.layers).rev() {
            let b = &tape.blocks[l];
            let w1 = p.get(&block_name(l, "mlp.w1"))?;
            let w2 = p.get(&block_name(l, "mlp.w2"))?;
            g.insert(block_name(l, "mlp.w2"), matmul_tn(&b.act, &dh)?);
            g.insert(block_name(l, "mlp.b2"), col_sum(&dh));
            let d_act = matmul_nt(&dh, w2)?;
            let d_pre = d_act.zip_map(&b.pre, "silu backward", |da, x| {
                let s = sigmoid(x);
                da * s * (T::one() + x * (T::one() - s))
            })?;
            g.insert(block_name(l, "mlp.w1"), matmul_tn(&b.mlp_norm.y, &d_pre)?);
            g.insert(block_name(l, "mlp.b1"), col_sum(&d_pre));
            let dm = matmul_nt(&d_pre, w1)?;
            dh.axpy(T::one(), &rms_norm_backward(&b.mlp_norm, &dm))?;

            let (da, ag) = layer_backward(&b.attn, &tape.attn_params[l], &tape.tables, &dh)?;
            g.insert(block_name(l, "attn.wq"), ag.wq);
            g.insert(block_name(l, "attn.wk"), ag.wk);
            g.insert(block_name(l, "attn.wv"), ag.wv);
            g.insert(block_name(l, "attn.wo"), ag.wo);
            dh.axpy(T::one(), &rms_norm_backward(&b.attn_norm, &da))?;
        }

        g.insert("embed.w", matmul_tn(&tape.x_in, &dh)?);
        let d_tok = col_sum(&dh);
        g.insert("time.w", matmul_tn(&tape.time_feats, &d_tok)?);
        g.insert("prompt", d_tok.clone());
        g.insert("time.b", d_tok);
        for t in g.tensors.values() {
            t.ensure_finite("model backward")?;
        }
        Ok(g)
    }
}

impl<T: Scalar> VelocityField<T> for ToyModel<T> {
    fn velocity(&self, z_t: &TokenGrid<T>, t: f64, cond_frames: usize) -> Result<Array<T>> {
        self.forward(z_t, t, cond_frames)
    }
}
