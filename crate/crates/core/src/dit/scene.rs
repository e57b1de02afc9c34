//! Synthetic stereo scenes with exact disparity.
//!
//! A scene is a stack of fronto-parallel textured planes seen by a rectified
//! stereo rig that moves along the optical axis. The farthest plane fills the
//! view; nearer planes are vertical bands bounded in world x and occlude what
//! lies behind them. Rendering casts one ray per pixel, so the right view of
//! a plane at camera depth `D` is the left view shifted by exactly
//! `fx·b/D` pixels.

use serde::{Deserialize, Serialize};

use crate::attention::TokenGrid;
use crate::camera::{Extrinsics, Intrinsics, NormalizationPolicy};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Array, Scalar};
use crate::trajectory::{sample_trajectory, Trajectory, TrajectoryConfig};

/// Plane depths must lie in this range, in meters.
pub const DEPTH_LIMITS: (f64, f64) = (1.0, 20.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Focal length in latent pixels.
    pub focal: f64,
    pub depth_range: (f64, f64),
    pub baseline_range: (f64, f64),
    /// Inclusive range of the number of planes.
    pub planes: (usize, usize),
    /// Endpoint |z| of the dolly, meters.
    pub dolly_range: (f64, f64),
    /// Texture frequencies in cycles per pixel at the first frame.
    pub frequency_range: (f64, f64),
    pub texture_components: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frames: 4,
            height: 8,
            width: 8,
            channels: 1,
            focal: 8.0,
            depth_range: (2.5, 6.0),
            baseline_range: (0.6, 1.0),
            planes: (1, 2),
            dolly_range: (0.0, 0.3),
            frequency_range: (0.06, 0.22),
            texture_components: 4,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (z0, z1) = self.depth_range;
        if !(DEPTH_LIMITS.0 <= z0 && z0 <= z1 && z1 <= DEPTH_LIMITS.1) {
            return Err(Error::invalid(format!(
                "scene depth range {:?} outside [{}, {}]",
                self.depth_range, DEPTH_LIMITS.0, DEPTH_LIMITS.1
            )));
        }
        let (b0, b1) = self.baseline_range;
        if !(0.0 < b0 && b0 <= b1) {
            return Err(Error::invalid("scene baseline range must be positive"));
        }
        if !(1 <= self.planes.0 && self.planes.0 <= self.planes.1) {
            return Err(Error::invalid("scene needs at least one plane"));
        }
        if self.dolly_range.1 >= z0 - 0.5 || self.dolly_range.0 < 0.0 {
            return Err(Error::invalid("dolly would bring the camera too close to a plane"));
        }
        let (f0, f1) = self.frequency_range;
        if !(0.0 < f0 && f0 <= f1 && f1 <= 0.5) {
            return Err(Error::invalid("texture frequencies must lie in (0, 0.5] cycles/px"));
        }
        if self.frames < 2 || self.height == 0 || self.width == 0 || self.channels == 0 || self.texture_components == 0
        {
            return Err(Error::invalid("scene extents must be positive and frames >= 2"));
        }
        if !(self.focal > 0.0) {
            return Err(Error::invalid("focal must be positive"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::centered(self.focal, self.width as u32, self.height as u32)
    }
}

/// Sum of cosines over a plane, parameterized by first-frame pixel
/// coordinates so frequencies are in cycles per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    /// `(fu, fv, phase, amplitude)` per component, per channel.
    pub channels: Vec<Vec<[f64; 4]>>,
}

impl Texture {
    /// Unit-variance texture with mostly horizontal frequencies.
    pub fn random(rng: &mut Rng, channels: usize, components: usize, freq: (f64, f64)) -> Self {
        let amp = (2.0 / components as f64).sqrt();
        let channels = (0..channels)
            .map(|_| {
                (0..components)
                    .map(|_| {
                        let r = rng.uniform_range(freq.0, freq.1);
                        let a = rng.uniform_range(-1.0, 1.0) * std::f64::consts::FRAC_PI_3;
                        let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                        [r * a.cos(), r * a.sin(), phase, amp]
                    })
                    .collect()
            })
            .collect();
        Texture { channels }
    }

    pub fn eval(&self, channel: usize, u: f64, v: f64) -> f64 {
        self.channels[channel]
            .iter()
            .map(|[fu, fv, ph, a]| a * (std::f64::consts::TAU * (fu * u + fv * v) + ph).cos())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    /// World z of the plane.
    pub depth: f64,
    /// World x interval covered; `None` is unbounded.
    pub x_extent: Option<(f64, f64)>,
    pub texture: Texture,
}

/// A rendered scene with per-pixel ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub planes: Vec<Plane>,
    pub intrinsics: Intrinsics,
    pub baseline: f64,
    pub trajectory: Trajectory,
    /// `(2, f, h, w, c)`.
    pub video: Array<f64>,
    /// Left-view disparity of the visible plane, `(f, h, w)`.
    pub disparity: Array<f64>,
}

impl SyntheticScene {
    /// Renders `planes` along `trajectory` (left camera; rotation must be
    /// identity) with a rig of the given baseline.
    pub fn render(
        planes: Vec<Plane>,
        intrinsics: Intrinsics,
        baseline: f64,
        trajectory: Trajectory,
        frames: usize,
    ) -> Result<Self> {
        validate_planes(&planes)?;
        if !(baseline > 0.0) {
            return Err(Error::invalid("baseline must be positive"));
        }
        if trajectory.len() < frames {
            return Err(Error::invalid("trajectory shorter than scene"));
        }
        let channels = planes[0].texture.channels.len();
        if planes.iter().any(|p| p.texture.channels.len() != channels) {
            return Err(Error::invalid("planes disagree on channel count"));
        }
        let (w, h) = (intrinsics.width as usize, intrinsics.height as usize);
        let mut scene = SyntheticScene {
            planes,
            intrinsics,
            baseline,
            trajectory,
            video: Array::zeros(&[2, frames, h, w, channels]),
            disparity: Array::zeros(&[frames, h, w]),
        };
        for t in 0..frames {
            for view in 0..2 {
                for y in 0..h {
                    for x in 0..w {
                        let (idx, u, v) = scene.trace(view, t, x as f64, y as f64)?;
                        let plane = &scene.planes[idx];
                        for c in 0..channels {
                            scene.video.set(&[view, t, y, x, c], plane.texture.eval(c, u, v));
                        }
                        if view == 0 {
                            let d = scene.disparity_of(idx, t)?;
                            scene.disparity.set(&[t, y, x], d);
                        }
                    }
                }
            }
        }
        Ok(scene)
    }

    fn center(&self, view: usize, t: usize) -> Result<[f64; 3]> {
        let e: &Extrinsics = &self.trajectory.frames[t].extrinsics;
        if (e.rotation - nalgebra::Matrix3::identity()).abs().max() > 1e-9 {
            return Err(Error::invalid("scene rendering supports translation-only trajectories"));
        }
        let c = e.center();
        Ok([c.x + view as f64 * self.baseline, c.y, c.z])
    }

    /// Camera-space depth of plane `idx` at frame `t`.
    pub fn plane_distance(&self, idx: usize, t: usize) -> Result<f64> {
        let d = self.planes[idx].depth - self.center(0, t)?[2];
        if d <= 0.0 {
            return Err(Error::invalid("plane behind the camera"));
        }
        Ok(d)
    }

    /// Disparity `fx·b/D` of plane `idx` at frame `t`.
    pub fn disparity_of(&self, idx: usize, t: usize) -> Result<f64> {
        Ok(self.intrinsics.fx * self.baseline / self.plane_distance(idx, t)?)
    }

    /// Visible plane at a (sub)pixel and its texture coordinates.
    pub fn trace(&self, view: usize, t: usize, x: f64, y: f64) -> Result<(usize, f64, f64)> {
        let k = &self.intrinsics;
        let c = self.center(view, t)?;
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for (i, p) in self.planes.iter().enumerate() {
            let dist = p.depth - c[2];
            if dist <= 0.0 {
                return Err(Error::invalid("plane behind the camera"));
            }
            let wx = c[0] + (x - k.cx) * dist / k.fx;
            let wy = c[1] + (y - k.cy) * dist / k.fy;
            let inside = p.x_extent.is_none_or(|(a, b)| (a..b).contains(&wx));
            if inside && best.is_none_or(|(bd, ..)| dist < bd) {
                best = Some((dist, i, wx * k.fx / p.depth, wy * k.fy / p.depth));
            }
        }
        let (_, i, u, v) = best.ok_or_else(|| Error::invalid("no plane covers the ray"))?;
        Ok((i, u, v))
    }

    pub fn frames(&self) -> usize {
        self.video.shape()[1]
    }

    /// Video as a token grid with rig cameras for every frame.
    pub fn grid<T: Scalar>(&self, policy: NormalizationPolicy) -> Result<TokenGrid<T>> {
        TokenGrid::with_trajectory(self.video.cast(), &self.trajectory, self.baseline, policy)
    }
}

fn validate_planes(planes: &[Plane]) -> Result<()> {
    if planes.is_empty() {
        return Err(Error::invalid("scene needs at least one plane"));
    }
    for (i, p) in planes.iter().enumerate() {
        if !(DEPTH_LIMITS.0..=DEPTH_LIMITS.1).contains(&p.depth) {
            return Err(Error::invalid(format!(
                "plane depth {} outside [{}, {}]",
                p.depth, DEPTH_LIMITS.0, DEPTH_LIMITS.1
            )));
        }
        if planes[..i].iter().any(|q| q.depth == p.depth) {
            return Err(Error::invalid(format!("two planes at equal depth {}", p.depth)));
        }
    }
    if !planes.iter().any(|p| p.x_extent.is_none()) {
        return Err(Error::invalid("one plane must be unbounded"));
    }
    Ok(())
}

/// Draws a scene: plane count, depths, band extents, textures, baseline and
/// a dolly trajectory, in that order.
pub fn generate_scene(rng: &mut Rng, cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let n = cfg.planes.0 + rng.below(cfg.planes.1 - cfg.planes.0 + 1);
    let mut depths: Vec<f64> = Vec::with_capacity(n);
    while depths.len() < n {
        let z = rng.uniform_range(cfg.depth_range.0, cfg.depth_range.1);
        if depths.iter().all(|&d| (d - z).abs() > 0.05 * (cfg.depth_range.1 - cfg.depth_range.0)) {
            depths.push(z);
        } else if cfg.depth_range.0 == cfg.depth_range.1 {
            return Err(Error::invalid("cannot place distinct planes in a zero-width depth range"));
        }
    }
    depths.sort_by(|a, b| b.total_cmp(a));
    let w = cfg.width as f64;
    let planes = depths
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let x_extent = (i > 0).then(|| {
                let width = rng.uniform_range(0.25, 0.5) * w;
                let start = rng.uniform_range(-0.5, w - width + 0.5);
                let to_world = |px: f64| (px - k.cx) * z / k.fx;
                (to_world(start), to_world(start + width))
            });
            Plane {
                depth: z,
                x_extent,
                texture: Texture::random(rng, cfg.channels, cfg.texture_components, cfg.frequency_range),
            }
        })
        .collect();
    let baseline = rng.uniform_range(cfg.baseline_range.0, cfg.baseline_range.1);
    let traj_cfg = TrajectoryConfig {
        z_range_m: cfg.dolly_range,
        yaw_range_deg: (0.0, 0.0),
        intrinsics: k,
    };
    let trajectory = sample_trajectory(rng, cfg.frames, &traj_cfg)?;
    SyntheticScene::render(planes, k, baseline, trajectory, cfg.frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;

    fn flat_texture(rng: &mut Rng) -> Texture {
        Texture::random(rng, 1, 4, (0.05, 0.2))
    }

    fn static_scene(planes: Vec<Plane>, w: u32, focal: f64, b: f64) -> SyntheticScene {
        let k = Intrinsics::centered(focal, w, 4).unwrap();
        let traj = Trajectory::constant(Camera::new(k, Extrinsics::identity()), 2).unwrap();
        SyntheticScene::render(planes, k, b, traj, 2).unwrap()
    }

    #[test]
    fn right_view_is_shifted_left_view() {
        let mut rng = Rng::new(1);
        // fx·b/Z = 8·0.5/2 = 2 px
        let planes = vec![Plane {
            depth: 2.0,
            x_extent: None,
            texture: flat_texture(&mut rng),
        }];
        let s = static_scene(planes, 16, 8.0, 0.5);
        for y in 0..4 {
            for x in 0..14 {
                let r = s.video.get(&[1, 0, y, x, 0]);
                let l = s.video.get(&[0, 0, y, x + 2, 0]);
                assert!((r - l).abs() < 1e-12);
            }
        }
        assert!(s.disparity.data().iter().all(|&d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn occlusion_band_width_is_disparity_difference() {
        let mut rng = Rng::new(2);
        let (far, near, b, fx) = (8.0, 2.0, 0.5, 16.0);
        let planes = vec![
            Plane {
                depth: far,
                x_extent: None,
                texture: flat_texture(&mut rng),
            },
            Plane {
                depth: near,
                x_extent: Some((0.0, 10.0)),
                texture: flat_texture(&mut rng),
            },
        ];
        let s = static_scene(planes, 64, fx, b);
        let (d_far, d_near) = (fx * b / far, fx * b / near);
        // left-view background points whose right-view match is hidden by the
        // near band, measured on a fine subpixel grid
        let steps = 100;
        let mut occluded = 0usize;
        for i in 0..64 * steps {
            let x = i as f64 / steps as f64;
            let (idx, ..) = s.trace(0, 0, x, 1.0).unwrap();
            if idx == 0 && s.trace(1, 0, x - d_far, 1.0).unwrap().0 == 1 {
                occluded += 1;
            }
        }
        let width = occluded as f64 / steps as f64;
        assert!((width - (d_near - d_far)).abs() < 0.02, "{width}");
    }

    #[test]
    fn depth_validation() {
        let mut rng = Rng::new(3);
        let tex = flat_texture(&mut rng);
        let mk = |d: f64, ext: Option<(f64, f64)>| Plane {
            depth: d,
            x_extent: ext,
            texture: tex.clone(),
        };
        assert!(validate_planes(&[mk(0.5, None)]).is_err());
        assert!(validate_planes(&[mk(25.0, None)]).is_err());
        assert!(validate_planes(&[mk(4.0, None), mk(4.0, Some((0.0, 1.0)))]).is_err());
        assert!(validate_planes(&[mk(4.0, Some((0.0, 1.0)))]).is_err());
        validate_planes(&[mk(4.0, None), mk(3.0, Some((0.0, 1.0)))]).unwrap();
        let bad = SceneConfig {
            depth_range: (0.5, 4.0),
            ..Default::default()
        };
        assert!(generate_scene(&mut rng, &bad).is_err());
    }

    #[test]
    fn generated_scenes_are_unit_variance_and_deterministic() {
        let cfg = SceneConfig {
            width: 32,
            height: 32,
            focal: 32.0,
            ..Default::default()
        };
        let a = generate_scene(&mut Rng::new(5), &cfg).unwrap();
        let b = generate_scene(&mut Rng::new(5), &cfg).unwrap();
        assert_eq!(a.video, b.video);
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut n = 0.0;
        for seed in 0..40 {
            let s = generate_scene(&mut Rng::new(seed), &cfg).unwrap();
            for &v in s.video.data() {
                sum += v;
                sq += v * v;
                n += 1.0;
            }
        }
        let mean = sum / n;
        let var = sq / n - mean * mean;
        assert!(mean.abs() < 0.1, "{mean}");
        assert!((var - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn disparity_matches_depth_over_trajectory() {
        let cfg = SceneConfig::default();
        let s = generate_scene(&mut Rng::new(7), &cfg).unwrap();
        for t in 0..cfg.frames {
            let d = s.disparity_of(0, t).unwrap();
            let z = s.plane_distance(0, t).unwrap();
            assert!((d - cfg.focal * s.baseline / z).abs() < 1e-12);
        }
        let grid: TokenGrid<f32> = s.grid(NormalizationPolicy::Normalized { scene_scale: 1.0 }).unwrap();
        assert_eq!(grid.dims().f, cfg.frames);
        assert!(grid.cameras().iter().all(Option::is_some));
    }
}
