//! Grouped softmax attention with a saved tape for the backward pass.
//!
//! A [`Group`] is a set of query rows attending to a set of key rows. The
//! attention variants differ only in how tokens are grouped: one group for
//! full attention, one per view for intra-view, one per (frame, row) for row
//! attention. Within a group the summation order is fixed, so groups can be
//! evaluated in any order with identical results.

use crate::error::{Error, Result};
use crate::flops::MacCounter;
use crate::tensor::{gemm, softmax_in_place, Array, Op, Scalar};

use super::grid::GridDims;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Group {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
    /// Keys on later frames than the query are masked out.
    pub causal: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadLayout {
    pub heads: usize,
    pub qk_dim: usize,
    pub v_dim: usize,
    pub scale: f64,
}

/// Softmax probabilities of every (group, head), `probs[g * heads + h]`.
pub(crate) type Tape<T> = Vec<Vec<T>>;

pub(crate) fn full_groups(dims: &GridDims) -> Vec<Group> {
    let all: Vec<usize> = (0..dims.tokens()).collect();
    vec![Group {
        queries: all.clone(),
        keys: all,
        causal: false,
    }]
}

pub(crate) fn intra_groups(dims: &GridDims, causal: bool) -> Vec<Group> {
    let n = dims.tokens_per_view();
    (0..2)
        .map(|v| {
            let idx: Vec<usize> = (v * n..(v + 1) * n).collect();
            Group {
                queries: idx.clone(),
                keys: idx,
                causal,
            }
        })
        .collect()
}

/// One group per (t, y) holding row y of both views. `band > 0` widens the
/// key set to rows `y-band..=y+band`; only used for fault injection.
pub(crate) fn row_groups(dims: &GridDims, band: usize) -> Vec<Group> {
    let mut out = Vec::with_capacity(dims.f * dims.h);
    for t in 0..dims.f {
        for y in 0..dims.h {
            let row = |yy: usize| (0..2).flat_map(move |v| (0..dims.w).map(move |x| (v, x))).map(move |(v, x)| dims.index(v, t, yy, x));
            let queries: Vec<usize> = row(y).collect();
            let keys: Vec<usize> = if band == 0 {
                queries.clone()
            } else {
                let lo = y.saturating_sub(band);
                let hi = (y + band).min(dims.h - 1);
                (lo..=hi).flat_map(row).collect()
            };
            out.push(Group {
                queries,
                keys,
                causal: false,
            });
        }
    }
    out
}

fn gather<T: Scalar>(src: &Array<T>, rows: &[usize], col0: usize, width: usize, out: &mut Vec<T>) {
    out.clear();
    for &r in rows {
        out.extend_from_slice(&src.row(r)[col0..col0 + width]);
    }
}

fn scatter_add<T: Scalar>(dst: &mut Array<T>, rows: &[usize], col0: usize, width: usize, src: &[T]) {
    for (i, &r) in rows.iter().enumerate() {
        let row = &mut dst.row_mut(r)[col0..col0 + width];
        for (d, &s) in row.iter_mut().zip(&src[i * width..(i + 1) * width]) {
            *d += s;
        }
    }
}

/// Accumulates `softmax(Q·Kᵀ·scale) · V` of every group into `out` (rows
/// indexed like `q`). `q`/`k` are already position encoded.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<T: Scalar>(
    q: &Array<T>,
    k: &Array<T>,
    v: &Array<T>,
    q_frames: &[i64],
    k_frames: &[i64],
    groups: &[Group],
    layout: HeadLayout,
    counter: Option<&MacCounter>,
    out: &mut Array<T>,
    mut tape: Option<&mut Tape<T>>,
) -> Result<()> {
    let HeadLayout {
        heads,
        qk_dim,
        v_dim,
        scale,
    } = layout;
    let scale = T::of_f64(scale);
    let (mut qg, mut kg, mut vg) = (Vec::new(), Vec::new(), Vec::new());
    for group in groups {
        let (lq, lk) = (group.queries.len(), group.keys.len());
        for h in 0..heads {
            gather(q, &group.queries, h * qk_dim, qk_dim, &mut qg);
            gather(k, &group.keys, h * qk_dim, qk_dim, &mut kg);
            gather(v, &group.keys, h * v_dim, v_dim, &mut vg);
            let mut scores = vec![T::zero(); lq * lk];
            gemm(Op::N, Op::T, lq, qk_dim, lk, scale, &qg, &kg, T::zero(), &mut scores);
            if let Some(c) = counter {
                c.record_matmul(lq, qk_dim, lk);
            }
            for (i, row) in scores.chunks_exact_mut(lk).enumerate() {
                if group.causal {
                    let fq = q_frames[group.queries[i]];
                    for (j, s) in row.iter_mut().enumerate() {
                        if k_frames[group.keys[j]] > fq {
                            *s = T::neg_infinity();
                        }
                    }
                }
                if row.iter().all(|s| *s == T::neg_infinity()) {
                    return Err(Error::invalid("attention: query row has no permitted key"));
                }
                softmax_in_place(row);
            }
            let mut og = vec![T::zero(); lq * v_dim];
            gemm(Op::N, Op::N, lq, lk, v_dim, T::one(), &scores, &vg, T::zero(), &mut og);
            if let Some(c) = counter {
                c.record_matmul(lq, lk, v_dim);
            }
            scatter_add(out, &group.queries, h * v_dim, v_dim, &og);
            if let Some(t) = tape.as_deref_mut() {
                t.push(scores);
            }
        }
    }
    out.ensure_finite("attention")
}

/// Gradients of [`forward`] with respect to the encoded `q`, `k` and `v`,
/// accumulated into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    q: &Array<T>,
    k: &Array<T>,
    v: &Array<T>,
    groups: &[Group],
    layout: HeadLayout,
    tape: &Tape<T>,
    d_out: &Array<T>,
    dq: &mut Array<T>,
    dk: &mut Array<T>,
    dv: &mut Array<T>,
) {
    let HeadLayout {
        heads,
        qk_dim,
        v_dim,
        scale,
    } = layout;
    let scale = T::of_f64(scale);
    let (mut qg, mut kg, mut vg, mut dog) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut slot = 0;
    for group in groups {
        let (lq, lk) = (group.queries.len(), group.keys.len());
        for h in 0..heads {
            let probs = &tape[slot];
            slot += 1;
            gather(q, &group.queries, h * qk_dim, qk_dim, &mut qg);
            gather(k, &group.keys, h * qk_dim, qk_dim, &mut kg);
            gather(v, &group.keys, h * v_dim, v_dim, &mut vg);
            gather(d_out, &group.queries, h * v_dim, v_dim, &mut dog);

            // dV = Pᵀ·dO
            let mut dvg = vec![T::zero(); lk * v_dim];
            gemm(Op::T, Op::N, lk, lq, v_dim, T::one(), probs, &dog, T::zero(), &mut dvg);
            scatter_add(dv, &group.keys, h * v_dim, v_dim, &dvg);

            // dP = dO·Vᵀ, dS = P ⊙ (dP - rowsum(dP ⊙ P)) · scale
            let mut ds = vec![T::zero(); lq * lk];
            gemm(Op::N, Op::T, lq, v_dim, lk, T::one(), &dog, &vg, T::zero(), &mut ds);
            for (drow, prow) in ds.chunks_exact_mut(lk).zip(probs.chunks_exact(lk)) {
                let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (d, &p) in drow.iter_mut().zip(prow) {
                    *d = p * (*d - dot) * scale;
                }
            }
            let mut dqg = vec![T::zero(); lq * qk_dim];
            gemm(Op::N, Op::N, lq, lk, qk_dim, T::one(), &ds, &kg, T::zero(), &mut dqg);
            scatter_add(dq, &group.queries, h * qk_dim, qk_dim, &dqg);
            let mut dkg = vec![T::zero(); lk * qk_dim];
            gemm(Op::T, Op::N, lk, lq, qk_dim, T::one(), &ds, &qg, T::zero(), &mut dkg);
            scatter_add(dk, &group.keys, h * qk_dim, qk_dim, &dkg);
        }
    }
}
