//! Chunked causal rollout with a two-view KV cache.
//!
//! Each step takes both views of one contiguous frame chunk. Its queries
//! attend to (a) keys of the same view from the cache and the chunk itself,
//! restricted to frames no later than the query's, and (b) the query's own
//! (frame, row) across both views. Afterwards the chunk's encoded keys and
//! values are appended to the cache, one entry per view.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::flops::MacCounter;
use crate::rope::{RopeConfig, RopeTables, TokenPosition, View};
use crate::tensor::{matmul, Array, Scalar};

use super::engine::{self, Group};
use super::{encode_qkv, AttentionParams, TokenGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapacityPolicy {
    #[default]
    Unbounded,
    /// Keep at most this many frames per view; the oldest chunks are evicted
    /// first. Rollouts that evict no longer match a full recompute.
    MaxFrames(usize),
}

/// Encoded keys and values of one view over a frame range.
#[derive(Debug, Clone)]
pub struct CachedChunk<T> {
    pub view: View,
    pub frames: Range<usize>,
    pub keys: Array<T>,
    pub values: Array<T>,
    pub positions: Vec<TokenPosition>,
}

#[derive(Debug, Clone)]
pub struct KVCache<T> {
    chunks: Vec<CachedChunk<T>>,
    policy: CapacityPolicy,
    next_frame: usize,
}

impl<T: Scalar> Default for KVCache<T> {
    fn default() -> Self {
        KVCache::new(CapacityPolicy::Unbounded)
    }
}

impl<T: Scalar> KVCache<T> {
    pub fn new(policy: CapacityPolicy) -> Self {
        KVCache {
            chunks: Vec::new(),
            policy,
            next_frame: 0,
        }
    }

    /// Number of cached view-chunks (two per step).
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// First frame the next chunk must start at.
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    pub fn chunks(&self) -> &[CachedChunk<T>] {
        &self.chunks
    }

    fn rows(&self) -> usize {
        self.chunks.iter().map(|c| c.keys.shape()[0]).sum()
    }

    fn push_pair(&mut self, left: CachedChunk<T>, right: CachedChunk<T>) {
        self.next_frame = left.frames.end;
        self.chunks.push(left);
        self.chunks.push(right);
        if let CapacityPolicy::MaxFrames(max) = self.policy {
            while self.chunks.len() > 2 {
                let cached: usize = self.chunks.iter().filter(|c| c.view == View::Left).map(|c| c.frames.len()).sum();
                if cached <= max {
                    break;
                }
                self.chunks.drain(..2);
            }
        }
    }
}

/// One rollout step: attends `chunk` to the cache and itself, then returns
/// the chunk's output and the cache extended by its keys and values.
pub fn causal_step<T: Scalar>(
    cache: KVCache<T>,
    chunk: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
) -> Result<(TokenGrid<T>, KVCache<T>)> {
    causal_step_counted(cache, chunk, params, cfg, None)
}

pub fn causal_step_counted<T: Scalar>(
    mut cache: KVCache<T>,
    chunk: &TokenGrid<T>,
    params: &AttentionParams<T>,
    cfg: &RopeConfig,
    counter: Option<&MacCounter>,
) -> Result<(TokenGrid<T>, KVCache<T>)> {
    let dims = chunk.dims();
    params.validate(dims.c, cfg)?;
    if chunk.frame_offset() != cache.next_frame {
        return Err(Error::OutOfOrderChunk {
            cached_end: cache.next_frame,
            chunk_start: chunk.frame_offset(),
        });
    }
    let positions = chunk.positions();
    let tables = RopeTables::new(&positions, cfg)?;
    let (q, k, v) = encode_qkv(&chunk.features(), params, &tables)?;
    let q_frames = chunk.frames();

    // Key rows: every cached chunk in order, then the current chunk.
    let n_cache = cache.rows();
    let n_chunk = dims.tokens();
    let qk_width = q.shape()[1];
    let v_width = v.shape()[1];
    let mut k_data = Vec::with_capacity((n_cache + n_chunk) * qk_width);
    let mut v_data = Vec::with_capacity((n_cache + n_chunk) * v_width);
    let mut k_frames = Vec::with_capacity(n_cache + n_chunk);
    let mut view_rows: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut row = 0;
    for c in &cache.chunks {
        k_data.extend_from_slice(c.keys.data());
        v_data.extend_from_slice(c.values.data());
        for p in &c.positions {
            k_frames.push(p.t);
            view_rows[c.view.index()].push(row);
            row += 1;
        }
    }
    k_data.extend_from_slice(k.data());
    v_data.extend_from_slice(v.data());
    k_frames.extend_from_slice(&q_frames);
    let per_view = dims.tokens_per_view();
    for (view, rows) in view_rows.iter_mut().enumerate() {
        rows.extend(n_cache + view * per_view..n_cache + (view + 1) * per_view);
    }
    let k_all = Array::from_vec(&[n_cache + n_chunk, qk_width], k_data)?;
    let v_all = Array::from_vec(&[n_cache + n_chunk, v_width], v_data)?;

    let mut groups: Vec<Group> = (0..2)
        .map(|view| Group {
            queries: (view * per_view..(view + 1) * per_view).collect(),
            keys: view_rows[view].clone(),
            causal: true,
        })
        .collect();
    groups.extend(engine::row_groups(&dims, 0).into_iter().map(|g| Group {
        keys: g.keys.iter().map(|&i| i + n_cache).collect(),
        ..g
    }));

    let mut o = Array::zeros(&[n_chunk, params.heads * params.d]);
    engine::forward(&q, &k_all, &v_all, &q_frames, &k_frames, &groups, params.layout(), counter, &mut o, None)?;
    let out = chunk.with_features(matmul(&o, &params.wo)?)?;

    let frames = chunk.frame_offset()..chunk.frame_offset() + dims.f;
    let take = |m: &Array<T>, view: usize| -> Result<Array<T>> {
        let width = m.shape()[1];
        Array::from_vec(
            &[per_view, width],
            m.data()[view * per_view * width..(view + 1) * per_view * width].to_vec(),
        )
    };
    let entry = |view: usize| -> Result<CachedChunk<T>> {
        Ok(CachedChunk {
            view: View::from_index(view),
            frames: frames.clone(),
            keys: take(&k, view)?,
            values: take(&v, view)?,
            positions: positions[view * per_view..(view + 1) * per_view].to_vec(),
        })
    };
    let (left, right) = (entry(0)?, entry(1)?);
    cache.push_pair(left, right);
    Ok((out, cache))
}
