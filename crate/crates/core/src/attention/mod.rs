//! Attention over stereo token grids.
//!
//! [`full_4d_attention`] attends jointly over every token of both views.
//! [`stereo_attention`] replaces it with the sum of [`intra_view_attention`]
//! (each view attends to itself across frames and space) and
//! [`row_attention`] (each (frame, row) of both views attends within itself,
//! which is where corresponding points of a rectified pair lie). All variants
//! share one set of projections; the branch outputs are summed before the
//! shared output projection. [`masked_dense_oracle`] is an independent dense
//! implementation with `-inf` logits on masked pairs, used to check the
//! grouped kernels.
//!
//! Logits are scaled by `1/√d` over the full `d + d_c` expanded dimension.

mod engine;
pub mod grid;
pub mod kv_cache;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::MacCounter;
use crate::rng::Rng;
use crate::rope::{unified_apply, RopeConfig, RopeTables, Side, TokenPosition};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Array, Scalar};

pub(crate) use engine::{Group, HeadLayout};
pub use grid::{GridDims, TokenGrid};
pub use kv_cache::{causal_step, CapacityPolicy, KVCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionMode {
    Full4D,
    StereoDecomposed,
    CausalChunked,
}

/// Which token pairs a forward pass attends over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Full4D,
    IntraView,
    Row,
    /// Intra-view plus row.
    Stereo,
    /// Intra-view restricted to keys on the same or earlier frames, plus row.
    CausalStereo,
}

impl From<AttentionMode> for Branch {
    fn from(m: AttentionMode) -> Self {
        match m {
            AttentionMode::Full4D => Branch::Full4D,
            AttentionMode::StereoDecomposed => Branch::Stereo,
            AttentionMode::CausalChunked => Branch::CausalStereo,
        }
    }
}

pub(crate) fn groups_for(branch: Branch, dims: &GridDims, row_band: usize) -> Vec<Group> {
    match branch {
        Branch::Full4D => engine::full_groups(dims),
        Branch::IntraView => engine::intra_groups(dims, false),
        Branch::Row => engine::row_groups(dims, row_band),
        Branch::Stereo => {
            let mut g = engine::intra_groups(dims, false);
            g.extend(engine::row_groups(dims, row_band));
            g
        }
        Branch::CausalStereo => {
            let mut g = engine::intra_groups(dims, true);
            g.extend(engine::row_groups(dims, row_band));
            g
        }
    }
}

/// Projections of one attention layer, shared by every branch.
///
/// `wq`, `wk`: `c × heads·(d + d_c)`; `wv`: `c × heads·d`;
/// `wo`: `heads·d × c_out`. Each head's query/key slice is `[rotary d |
/// camera d_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub wq: Array<T>,
    pub wk: Array<T>,
    pub wv: Array<T>,
    pub wo: Array<T>,
    pub heads: usize,
    pub d: usize,
    pub d_c: usize,
}

impl<T: Scalar> AttentionParams<T> {
    /// Gaussian weights with standard deviation `1/√fan_in`.
    pub fn random(rng: &mut Rng, c: usize, c_out: usize, heads: usize, cfg: &RopeConfig) -> Self {
        let qk = heads * cfg.dim();
        let hv = heads * cfg.d;
        let s_in = 1.0 / (c as f64).sqrt();
        AttentionParams {
            wq: rng.normal_array(&[c, qk], s_in),
            wk: rng.normal_array(&[c, qk], s_in),
            wv: rng.normal_array(&[c, hv], s_in),
            wo: rng.normal_array(&[hv, c_out], 1.0 / (hv as f64).sqrt()),
            heads,
            d: cfg.d,
            d_c: cfg.d_c,
        }
    }

    pub fn qk_dim(&self) -> usize {
        self.d + self.d_c
    }

    pub(crate) fn layout(&self) -> HeadLayout {
        HeadLayout {
            heads: self.heads,
            qk_dim: self.qk_dim(),
            v_dim: self.d,
            scale: 1.0 / (self.d as f64).sqrt(),
        }
    }

    pub fn validate(&self, c: usize, cfg: &RopeConfig) -> Result<()> {
        if cfg.d != self.d || cfg.d_c != self.d_c {
            return Err(Error::invalid(format!(
                "attention params (d={}, d_c={}) do not match rope config (d={}, d_c={})",
                self.d, self.d_c, cfg.d, cfg.d_c
            )));
        }
        let qk = self.heads * self.qk_dim();
        let hv = self.heads * self.d;
        let ok = self.heads > 0
            && self.wq.shape() == [c, qk]
            && self.wk.shape() == [c, qk]
            && self.wv.shape() == [c, hv]
            && self.wo.ndim() == 2
            && self.wo.shape()[0] == hv;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "attention params inconsistent with c={c}, heads={}, d={}, d_c={}",
                self.heads, self.d, self.d_c
            )))
        }
    }

    pub fn c_out(&self) -> usize {
        self.wo.shape()[1]
    }
}

/// Gradients of the four projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T> {
    pub wq: Array<T>,
    pub wk: Array<T>,
    pub wv: Array<T>,
    pub wo: Array<T>,
}

/// Encoded queries/keys, values and the pre-projection output of one layer.
#[derive(Debug, Clone)]
pub struct LayerTape<T> {
    x: Array<T>,
    q: Array<T>,
    k: Array<T>,
    v: Array<T>,
    o: Array<T>,
    groups: Vec<Group>,
    probs: engine::Tape<T>,
}

/// Projects token rows and applies the unified RoPE to every head slice.
pub(crate) fn encode_qkv<T: Scalar>(
    x: &Array<T>,
    params: &AttentionParams<T>,
    tables: &RopeTables<T>,
) -> Result<(Array<T>, Array<T>, Array<T>)> {
    let mut q = matmul(x, &params.wq)?;
    let mut k = matmul(x, &params.wk)?;
    let v = matmul(x, &params.wv)?;
    let dq = params.qk_dim();
    for i in 0..q.shape()[0] {
        for h in 0..params.heads {
            tables.apply(Side::Query, i, &mut q.row_mut(i)[h * dq..(h + 1) * dq]);
            tables.apply(Side::Key, i, &mut k.row_mut(i)[h * dq..(h + 1) * dq]);
        }
    }
    Ok((q, k, v))
}

/// Forward pass of one attention layer on token rows `x` (`N × c`).
///
/// `frames` gives the absolute frame of each token (for the causal mask).
/// Only the score and value products are reported to `counter`.
#[allow(clippy::too_many_arguments)]
pub fn layer_forward<T: Scalar>(
    x: &Array<T>,
    params: &AttentionParams<T>,
    tables: &RopeTables<T>,
    frames: &[i64],
    dims: &GridDims,
    branch: Branch,
    counter: Option<&MacCounter>,
) -> Result<(Array<T>, LayerTape<T>)> {
    layer_forward_banded(x, params, tables, frames, dims, branch, counter, 0)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_forward_banded<T: Scalar>(
    x: &Array<T>,
    params: &AttentionParams<T>,
    tables: &RopeTables<T>,
    frames: &[i64],
    dims: &GridDims,
    branch: Branch,
    counter: Option<&MacCounter>,
    row_band: usize,
) -> Result<(Array<T>, LayerTape<T>)> {
    let n = x.dims2("attention input")?.0;
    if n != dims.tokens() || tables.len() != n || frames.len() != n {
        return Err(Error::invalid("attention: token count mismatch"));
    }
    let (q, k, v) = encode_qkv(x, params, tables)?;
    let groups = groups_for(branch, dims, row_band);
    let layout = params.layout();
    let mut o = Array::zeros(&[n, params.heads * params.d]);
    let mut probs = Vec::new();
    engine::forward(&q, &k, &v, frames, frames, &groups, layout, counter, &mut o, Some(&mut probs))?;
    let y = matmul(&o, &params.wo)?;
    Ok((
        y,
        LayerTape {
            x: x.clone(),
            q,
            k,
            v,
            o,
            groups,
            probs,
        },
    ))
}

/// Backward pass of [`layer_forward`]: returns `dL/dx` and the parameter
/// gradients given `dL/dy`.
pub fn layer_backward<T: Scalar>(
    tape: &LayerTape<T>,
    params: &AttentionParams<T>,
    tables: &RopeTables<T>,
    d_y: &Array<T>,
) -> Result<(Array<T>, AttentionGrads<T>)> {
    let d_wo = matmul_tn(&tape.o, d_y)?;
    let d_o = matmul_nt(d_y, &params.wo)?;
    let mut dq = Array::zeros(tape.q.shape());
    let mut dk = Array::zeros(tape.k.shape());
    let mut dv = Array::zeros(tape.v.shape());
    engine::backward(
        &tape.q,
        &tape.k,
        &tape.v,
        &tape.groups,
        params.layout(),
        &tape.probs,
        &d_o,
        &mut dq,
        &mut dk,
        &mut dv,
    );
    let width = params.qk_dim();
    for i in 0..dq.shape()[0] {
        for h in 0..params.heads {
            tables.apply_transpose(Side::Query, i, &mut dq.row_mut(i)[h * width..(h + 1) * width]);
            tables.apply_transpose(Side::Key, i, &mut dk.row_mut(i)[h * width..(h + 1) * width]);
        }
    }
    let d_wq = matmul_tn(&tape.x, &dq)?;
    let d_wk = matmul_tn(&tape.x, &dk)?;
    let d_wv = matmul_tn(&tape.x, &dv)?;
    let mut dx = matmul_nt(&dq, &params.wq)?;
    dx.axpy(T::one(), &matmul_nt(&dk, &params.wk)?)?;
    dx.axpy(T::one(), &matmul_nt(&dv, &params.wv)?)?;
    Ok((
        dx,
        AttentionGrads {
            wq: d_wq,
            wk: d_wk,
            wv: d_wv,
            wo: d_wo,
        },
    ))
}

/// Runs `branch` on a grid, reporting score/value products to `counter`.
pub fn attend<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
    branch: Branch,
    counter: Option<&MacCounter>,
) -> Result<TokenGrid<T>> {
    attend_banded(grid, params, cfg, branch, counter, 0)
}

pub(crate) fn attend_banded<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
    branch: Branch,
    counter: Option<&MacCounter>,
    row_band: usize,
) -> Result<TokenGrid<T>> {
    let dims = grid.dims();
    params.validate(dims.c, cfg)?;
    let tables = RopeTables::new(&grid.positions(), cfg)?;
    let (y, _) = layer_forward_banded(
        &grid.features(),
        params,
        &tables,
        &grid.frames(),
        &dims,
        branch,
        counter,
        row_band,
    )?;
    grid.with_features(y)
}

/// Joint softmax attention over all `2·f·h·w` tokens.
pub fn full_4d_attention<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
) -> Result<TokenGrid<T>> {
    attend(grid, params, cfg, Branch::Full4D, None)
}

/// Attention restricted to tokens of the same view.
pub fn intra_view_attention<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
) -> Result<TokenGrid<T>> {
    attend(grid, params, cfg, Branch::IntraView, None)
}

/// Attention among the `2w` tokens of row `y` of both views at frame `t`.
pub fn row_attention<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
) -> Result<TokenGrid<T>> {
    attend(grid, params, cfg, Branch::Row, None)
}

/// Intra-view plus row attention, summed before the output projection.
pub fn stereo_attention<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
) -> Result<TokenGrid<T>> {
    attend(grid, params, cfg, Branch::Stereo, None)
}

/// Row attention whose key set spans `band` extra rows on each side. Only
/// meant for fault-injection checks.
#[doc(hidden)]
pub fn row_attention_widened<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
    band: usize,
) -> Result<TokenGrid<T>> {
    attend_banded(grid, params, cfg, Branch::Row, None, band)
}

/// Dense attention over all token pairs with `-inf` logits where `mask` is
/// false. Written independently of the grouped kernels.
pub fn masked_dense_oracle<T: Scalar, M>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
    mask: M,
) -> Result<TokenGrid<T>>
where
    M: Fn(&TokenPosition, &TokenPosition) -> bool,
{
    let dims = grid.dims();
    params.validate(dims.c, cfg)?;
    let n = dims.tokens();
    let x = grid.features();
    let q = matmul(&x, &params.wq)?;
    let k = matmul(&x, &params.wk)?;
    let v = matmul(&x, &params.wv)?;
    let positions = grid.positions();
    let dq = params.qk_dim();
    let dv = params.d;
    let scale = 1.0 / (params.d as f64).sqrt();

    // encoded[h][i] = unified_apply of token i's head-h slice
    let encode = |m: &Array<T>, side: Side| -> Result<Vec<Vec<Vec<T>>>> {
        (0..params.heads)
            .map(|h| {
                (0..n)
                    .map(|i| unified_apply(&m.row(i)[h * dq..(h + 1) * dq], &positions[i], cfg, side))
                    .collect()
            })
            .collect()
    };
    let qe = encode(&q, Side::Query)?;
    let ke = encode(&k, Side::Key)?;

    let mut o = Array::<T>::zeros(&[n, params.heads * dv]);
    let mut logits = vec![f64::NEG_INFINITY; n];
    for i in 0..n {
        let allowed: Vec<bool> = (0..n).map(|j| mask(&positions[i], &positions[j])).collect();
        if !allowed.iter().any(|&a| a) {
            return Err(Error::invalid(format!("masked_dense_oracle: query {i} has no permitted key")));
        }
        for h in 0..params.heads {
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                logits[j] = if allowed[j] {
                    let s: f64 = qe[h][i].iter().zip(&ke[h][j]).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    s * scale
                } else {
                    f64::NEG_INFINITY
                };
                max = max.max(logits[j]);
            }
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = if l.is_finite() { (*l - max).exp() } else { 0.0 };
                total += *l;
            }
            let out = &mut o.row_mut(i)[h * dv..(h + 1) * dv];
            for (c, slot) in out.iter_mut().enumerate() {
                let acc: f64 = (0..n)
                    .filter(|&j| allowed[j])
                    .map(|j| logits[j] / total * v.row(j)[h * dv + c].as_f64())
                    .sum();
                *slot = T::of_f64(acc);
            }
        }
    }
    o.ensure_finite("masked_dense_oracle")?;
    grid.with_features(matmul(&o, &params.wo)?)
}

/// Mask predicates matching each grouped branch.
pub mod masks {
    use crate::rope::TokenPosition;

    pub fn all(_: &TokenPosition, _: &TokenPosition) -> bool {
        true
    }

    pub fn same_view(q: &TokenPosition, k: &TokenPosition) -> bool {
        q.view == k.view
    }

    pub fn same_row(q: &TokenPosition, k: &TokenPosition) -> bool {
        q.t == k.t && q.y == k.y
    }

    pub fn same_view_causal(q: &TokenPosition, k: &TokenPosition) -> bool {
        q.view == k.view && k.t <= q.t
    }
}

/// One-shot causal stereo attention, the reference for chunked rollout:
/// the intra-view branch sees keys on the same or earlier frames, the row
/// branch sees the query's own (frame, row).
pub fn causal_stereo_attention<T: Scalar>(
    grid: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
) -> Result<TokenGrid<T>> {
    attend(grid, params, cfg, Branch::CausalStereo, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Extrinsics, Intrinsics, NormalizationPolicy, StereoRig};
    use nalgebra::Matrix4;

    fn random_grid<T: Scalar>(rng: &mut Rng, f: usize, h: usize, w: usize, c: usize) -> TokenGrid<T> {
        let values = rng.normal_array(&[2, f, h, w, c], 1.0);
        let cams = (0..2 * f)
            .map(|_| Some(Matrix4::from_fn(|_, _| rng.normal() * 0.3) + Matrix4::identity()))
            .collect();
        TokenGrid::new(values, cams).unwrap()
    }

    fn setup(seed: u64, f: usize, h: usize, w: usize) -> (TokenGrid<f64>, AttentionParams<f64>, RopeConfig) {
        let mut rng = Rng::new(seed);
        let cfg = RopeConfig::new(6, 4).unwrap();
        let grid = random_grid(&mut rng, f, h, w, 5);
        let params = AttentionParams::random(&mut rng, 5, 3, 2, &cfg);
        (grid, params, cfg)
    }

    fn max_diff(a: &TokenGrid<f64>, b: &TokenGrid<f64>) -> f64 {
        a.values().max_abs_diff(b.values()).unwrap()
    }

    #[test]
    fn grouped_branches_match_oracle() {
        for seed in 0..5 {
            let (grid, params, cfg) = setup(seed, 2, 3, 2);
            let full = full_4d_attention(&grid, &params, &cfg).unwrap();
            assert!(max_diff(&full, &masked_dense_oracle(&grid, &params, &cfg, masks::all).unwrap()) < 1e-12);
            let intra = intra_view_attention(&grid, &params, &cfg).unwrap();
            assert!(max_diff(&intra, &masked_dense_oracle(&grid, &params, &cfg, masks::same_view).unwrap()) < 1e-12);
            let row = row_attention(&grid, &params, &cfg).unwrap();
            assert!(max_diff(&row, &masked_dense_oracle(&grid, &params, &cfg, masks::same_row).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn two_token_closed_form() {
        // f = h = w = 1: one token per view. Each query mixes the two values
        // with weight σ(s_self - s_other).
        use crate::rope::unified_logit;
        let (grid, params, cfg) = setup(7, 1, 1, 1);
        let x = grid.features();
        let q = matmul(&x, &params.wq).unwrap();
        let k = matmul(&x, &params.wk).unwrap();
        let v = matmul(&x, &params.wv).unwrap();
        let pos = grid.positions();
        let dq = params.qk_dim();
        let mut o = Array::<f64>::zeros(&[2, params.heads * params.d]);
        for i in 0..2 {
            for h in 0..params.heads {
                let s: Vec<f64> = (0..2)
                    .map(|j| {
                        unified_logit(&q.row(i)[h * dq..(h + 1) * dq], &k.row(j)[h * dq..(h + 1) * dq], &pos[i], &pos[j], &cfg).unwrap()
                            / (params.d as f64).sqrt()
                    })
                    .collect();
                let p0 = 1.0 / (1.0 + (s[1] - s[0]).exp());
                for c in 0..params.d {
                    let idx = h * params.d + c;
                    o.row_mut(i)[idx] = p0 * v.row(0)[idx] + (1.0 - p0) * v.row(1)[idx];
                }
            }
        }
        let expected = matmul(&o, &params.wo).unwrap();
        let full = full_4d_attention(&grid, &params, &cfg).unwrap();
        assert!(full.features().max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn zero_values_give_zero_output() {
        let (grid, mut params, cfg) = setup(8, 2, 2, 2);
        params.wv = Array::zeros(params.wv.shape());
        for out in [
            full_4d_attention(&grid, &params, &cfg).unwrap(),
            stereo_attention(&grid, &params, &cfg).unwrap(),
        ] {
            assert_eq!(out.values().max_abs(), 0.0);
        }
    }

    #[test]
    fn swapping_views_is_equivariant() {
        let (grid, params, cfg) = setup(9, 2, 2, 3);
        for branch in [Branch::Full4D, Branch::Stereo] {
            let a = attend(&grid, &params, &cfg, branch, None).unwrap();
            let b = attend(&grid.swap_views(), &params, &cfg, branch, None).unwrap().swap_views();
            assert!(max_diff(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn identical_views_identical_intra_outputs() {
        let mut rng = Rng::new(10);
        let cfg = RopeConfig::new(6, 4).unwrap();
        let one: Array<f64> = rng.normal_array(&[1, 2, 2, 3, 4], 1.0);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let cam = Some(Matrix4::from_fn(|_, _| rng.normal() * 0.2) + Matrix4::identity());
        let grid = TokenGrid::new(Array::from_vec(&[2, 2, 2, 3, 4], data).unwrap(), vec![cam; 4]).unwrap();
        let params = AttentionParams::random(&mut rng, 4, 4, 1, &cfg);
        let out = intra_view_attention(&grid, &params, &cfg).unwrap();
        let half = out.values().len() / 2;
        assert_eq!(&out.values().data()[..half], &out.values().data()[half..]);
    }

    #[test]
    fn intra_view_is_full_attention_per_view() {
        let (grid, params, cfg) = setup(11, 2, 2, 2);
        let dims = grid.dims();
        let intra = intra_view_attention(&grid, &params, &cfg).unwrap();
        let tables = RopeTables::new(&grid.positions(), &cfg).unwrap();
        let (q, k, v) = encode_qkv(&grid.features(), &params, &tables).unwrap();
        let n = dims.tokens_per_view();
        for view in 0..2 {
            let rows: Vec<usize> = (view * n..(view + 1) * n).collect();
            let pick = |m: &Array<f64>| {
                let data = rows.iter().flat_map(|&r| m.row(r).to_vec()).collect();
                Array::from_vec(&[n, m.shape()[1]], data).unwrap()
            };
            let (qv, kv, vv) = (pick(&q), pick(&k), pick(&v));
            let frames = vec![0; n];
            let mut o = Array::zeros(&[n, params.heads * params.d]);
            let all: Vec<usize> = (0..n).collect();
            let group = Group { queries: all.clone(), keys: all, causal: false };
            engine::forward(&qv, &kv, &vv, &frames, &frames, &[group], params.layout(), None, &mut o, None).unwrap();
            let y = matmul(&o, &params.wo).unwrap();
            let got = intra.features();
            for (i, &r) in rows.iter().enumerate() {
                for (a, b) in got.row(r).iter().zip(y.row(i)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rows_do_not_interact() {
        let (grid, params, cfg) = setup(12, 2, 3, 2);
        let dims = grid.dims();
        let base = row_attention(&grid, &params, &cfg).unwrap();
        let mut values = grid.values().clone();
        for view in 0..2 {
            for x in 0..dims.w {
                let i = dims.index(view, 1, 1, x);
                values.row_mut(i).iter_mut().for_each(|v| *v += 3.0);
            }
        }
        let perturbed = TokenGrid::new(values.reshape(&dims.shape()).unwrap(), grid.cameras().to_vec()).unwrap();
        let out = row_attention(&perturbed, &params, &cfg).unwrap();
        let (a, b) = (base.features(), out.features());
        for i in 0..dims.tokens() {
            let (_, t, y, _) = dims.coords(i);
            if (t, y) != (1, 1) {
                assert_eq!(a.row(i), b.row(i));
            } else {
                assert_ne!(a.row(i), b.row(i));
            }
        }
    }

    #[test]
    fn stereo_is_sum_of_branches() {
        let (grid, params, cfg) = setup(13, 2, 2, 3);
        let s = stereo_attention(&grid, &params, &cfg).unwrap();
        let sum = intra_view_attention(&grid, &params, &cfg)
            .unwrap()
            .values()
            .add(row_attention(&grid, &params, &cfg).unwrap().values())
            .unwrap();
        assert!(s.values().max_abs_diff(&sum).unwrap() < 1e-12);
    }

    #[test]
    fn output_is_linear_in_values() {
        let (grid, mut params, cfg) = setup(14, 2, 2, 2);
        let a = stereo_attention(&grid, &params, &cfg).unwrap();
        params.wv = params.wv.scale(2.0).unwrap();
        let b = stereo_attention(&grid, &params, &cfg).unwrap();
        assert!(b.values().max_abs_diff(&a.values().scale(2.0).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn mask_union_covers_all_pairs_when_one_row_one_frame() {
        let (grid, ..) = setup(15, 1, 1, 2);
        let pos = grid.positions();
        for p in &pos {
            for k in &pos {
                assert!(masks::same_view(p, k) || masks::same_row(p, k));
            }
        }
        // two rows: cross-view pairs on different rows are covered by neither
        let (grid, ..) = setup(15, 1, 2, 2);
        let pos = grid.positions();
        let uncovered = pos
            .iter()
            .flat_map(|p| pos.iter().map(move |k| (p, k)))
            .filter(|(p, k)| !masks::same_view(p, k) && !masks::same_row(p, k))
            .count();
        assert_eq!(uncovered, 2 * 2 * 2 * 2);
    }

    #[test]
    fn oracle_rejects_empty_rows() {
        let (grid, params, cfg) = setup(16, 1, 1, 2);
        assert!(masked_dense_oracle(&grid, &params, &cfg, |_, _| false).is_err());
    }

    #[test]
    fn params_must_match_config() {
        let (grid, params, _) = setup(17, 1, 1, 2);
        let other = RopeConfig::new(8, 4).unwrap();
        assert!(full_4d_attention(&grid, &params, &other).is_err());
    }

    #[test]
    fn widened_rows_diverge_from_oracle() {
        let (grid, params, cfg) = setup(18, 1, 3, 2);
        let wide = row_attention_widened(&grid, &params, &cfg, 1).unwrap();
        let oracle = masked_dense_oracle(&grid, &params, &cfg, masks::same_row).unwrap();
        assert!(max_diff(&wide, &oracle) > 1e-6);
    }

    #[test]
    fn rig_cameras_attach_per_view() {
        let k = Intrinsics::centered(4.0, 4, 4).unwrap();
        let rig = StereoRig::rectified(k, Extrinsics::identity(), 0.2).unwrap();
        let grid = TokenGrid::with_rig(Array::<f64>::zeros(&[2, 3, 2, 2, 1]), &rig, NormalizationPolicy::default()).unwrap();
        assert_eq!(grid.camera(0, 2), grid.camera(0, 0));
        assert_ne!(grid.camera(0, 0), grid.camera(1, 0));
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        use crate::gradcheck::{fd_gradient, rel_error};
        let (grid, params, cfg) = setup(19, 2, 2, 2);
        let dims = grid.dims();
        let tables = RopeTables::new(&grid.positions(), &cfg).unwrap();
        let frames = grid.frames();
        let mut rng = Rng::new(99);
        let probe: Array<f64> = rng.normal_array(&[dims.tokens(), params.c_out()], 1.0);
        let loss = |p: &AttentionParams<f64>, x: &Array<f64>| -> Result<f64> {
            let (y, _) = layer_forward(x, p, &tables, &frames, &dims, Branch::Stereo, None)?;
            y.dot(&probe)
        };
        let x = grid.features();
        let (_, tape) = layer_forward(&x, &params, &tables, &frames, &dims, Branch::Stereo, None).unwrap();
        let (dx, grads) = layer_backward(&tape, &params, &tables, &probe).unwrap();

        let check = |analytic: &Array<f64>, numeric: &Array<f64>| {
            for (a, n) in analytic.data().iter().zip(numeric.data()) {
                assert!(rel_error(*a, *n, 1e-6) < 1e-5, "{a} vs {n}");
            }
        };
        check(&dx, &fd_gradient(|xx| loss(&params, xx), &x, 1e-5).unwrap());
        let wq = fd_gradient(|w| loss(&AttentionParams { wq: w.clone(), ..params.clone() }, &x), &params.wq, 1e-5).unwrap();
        check(&grads.wq, &wq);
        let wk = fd_gradient(|w| loss(&AttentionParams { wk: w.clone(), ..params.clone() }, &x), &params.wk, 1e-5).unwrap();
        check(&grads.wk, &wk);
        let wv = fd_gradient(|w| loss(&AttentionParams { wv: w.clone(), ..params.clone() }, &x), &params.wv, 1e-5).unwrap();
        check(&grads.wv, &wv);
        let wo = fd_gradient(|w| loss(&AttentionParams { wo: w.clone(), ..params.clone() }, &x), &params.wo, 1e-5).unwrap();
        check(&grads.wo, &wo);
    }
}
