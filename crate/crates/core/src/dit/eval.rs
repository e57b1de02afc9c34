//! Stereo consistency of generated frames.
//!
//! For a rectified pair the right view is the left view shifted by the
//! disparity. The estimate is the integer shift `s` maximizing the Pearson
//! correlation between `right(x)` and `left(x + s)` over their overlap,
//! pooled across the generated frames of one video.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Array, Scalar};

use super::flow::{sample, SampleOptions, VelocityField};
use super::scene::{generate_scene, SceneConfig};

/// Correlation between `right(x)` and `left(x + shift)` over frames
/// `from..` of a `(2, f, h, w, c)` video.
pub fn shift_correlation<T: Scalar>(video: &Array<T>, from: usize, shift: i64) -> Result<f64> {
    let s = video.shape();
    if s.len() != 5 || s[0] != 2 || from >= s[1] {
        return Err(Error::invalid("shift_correlation: expected (2,f,h,w,c) with frames after `from`"));
    }
    let (f, h, w, c) = (s[1], s[2], s[3], s[4]);
    let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for t in from..f {
        for y in 0..h {
            for x in 0..w as i64 {
                let xl = x + shift;
                if !(0..w as i64).contains(&xl) {
                    continue;
                }
                for ch in 0..c {
                    let a = video.get(&[1, t, y, x as usize, ch]).as_f64();
                    let b = video.get(&[0, t, y, xl as usize, ch]).as_f64();
                    n += 1.0;
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
        }
    }
    if n < 2.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let cov = sab / n - sa / n * sb / n;
    let va = saa / n - (sa / n).powi(2);
    let vb = sbb / n - (sb / n).powi(2);
    if va <= 0.0 || vb <= 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Integer shift in `0..=max_shift` with the highest correlation.
pub fn estimate_disparity<T: Scalar>(video: &Array<T>, from: usize, max_shift: i64) -> Result<i64> {
    let mut best = (0, f64::NEG_INFINITY);
    for s in 0..=max_shift {
        let r = shift_correlation(video, from, s)?;
        if r > best.1 {
            best = (s, r);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityCheck {
    pub scene: usize,
    /// Mean true disparity over generated frames, pixels.
    pub expected: f64,
    pub estimated: i64,
    pub within_tolerance: bool,
}

/// Generates a continuation of `n` scenes from `scene_cfg` (conditioned on
/// their first `cond_frames` frames) and compares the measured disparity of
/// the generated frames with the truth. Scenes are drawn from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn disparity_checks<T: Scalar, V: VelocityField<T>>(
    field: &V,
    scene_cfg: &SceneConfig,
    policy: crate::camera::NormalizationPolicy,
    cond_frames: usize,
    n: usize,
    seed: u64,
    opts: SampleOptions,
    tolerance_px: f64,
) -> Result<Vec<DisparityCheck>> {
    let base = Rng::new(seed);
    (0..n)
        .map(|i| {
            let mut rng = base.fork(i as u64);
            let scene = generate_scene(&mut rng, scene_cfg)?;
            let cond = scene.grid::<T>(policy)?;
            let out = sample(field, &cond, cond_frames, opts, &mut rng)?;
            let frames = scene.frames();
            let expected = (cond_frames..frames)
                .map(|t| scene.disparity.get(&[t, 0, 0]))
                .sum::<f64>()
                / (frames - cond_frames) as f64;
            let max_shift = (scene_cfg.width as i64 / 2).max(1);
            let estimated = estimate_disparity(out.values(), cond_frames, max_shift)?;
            Ok(DisparityCheck {
                scene: i,
                expected,
                estimated,
                within_tolerance: (estimated as f64 - expected).abs() <= tolerance_px,
            })
        })
        .collect()
}
