//! Chunked causal rollout with a two-view KV cache reproduces the one-shot
//! causal computation.
//!
//! cargo run --example kv_cache_rollout -- [chunk]

use stereoworld::attention::{causal_step, causal_stereo_attention, AttentionParams, KVCache, TokenGrid};
use stereoworld::camera::NormalizationPolicy;
use stereoworld::rng::Rng;
use stereoworld::rope::RopeConfig;
use stereoworld::trajectory::{sample_trajectory, TrajectoryConfig};

fn main() -> stereoworld::Result<()> {
    let chunk: usize = std::env::args().nth(1).map(|s| s.parse().expect("chunk")).unwrap_or(2);
    let mut rng = Rng::new(3);
    let (f, h, w, c) = (8, 3, 5, 8);
    let cfg = RopeConfig::new(12, 8)?;
    let traj = sample_trajectory(&mut rng, f, &TrajectoryConfig::default())?;
    let values = rng.normal_array(&[2, f, h, w, c], 1.0);
    let grid = TokenGrid::<f32>::with_trajectory(values, &traj, 0.063, NormalizationPolicy::default())?;
    let params = AttentionParams::random(&mut rng, c, c, 2, &cfg);

    let reference = causal_stereo_attention(&grid, &params, &cfg)?;
    let mut cache = KVCache::default();
    let mut outputs = Vec::new();
    for start in (0..f).step_by(chunk) {
        let piece = grid.slice_frames(start, chunk.min(f - start))?;
        let (out, next) = causal_step(cache, &piece, &params, &cfg)?;
        println!("frames {start}..{}: cache holds {} view-chunks", start + piece.dims().f, next.len());
        cache = next;
        outputs.push(out);
    }
    let rolled = TokenGrid::concat_frames(&outputs)?;
    println!("max |rollout - one-shot| = {:.2e}", rolled.values().max_abs_diff(reference.values())?);
    Ok(())
}
