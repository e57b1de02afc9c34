//! Random camera trajectories and their JSON file format.
//!
//! A trajectory starts at the identity pose. The final pose translates along
//! z by a magnitude drawn from `z_range_m` and rotates about y by a magnitude
//! drawn from `yaw_range_deg`, each with an independent random sign. Frames in
//! between interpolate the translation linearly and the rotation along the
//! shortest arc.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Extrinsics, Intrinsics, StereoRig};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Endpoint |z translation| range in meters.
    pub z_range_m: (f64, f64),
    /// Endpoint |yaw| range in degrees.
    pub yaw_range_deg: (f64, f64),
    pub intrinsics: Intrinsics,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            z_range_m: (4.0, 20.0),
            yaw_range_deg: (50.0, 150.0),
            intrinsics: Intrinsics::centered(320.0, 640, 480).expect("valid default intrinsics"),
        }
    }
}

impl TrajectoryConfig {
    fn validate(&self) -> Result<()> {
        let (z0, z1) = self.z_range_m;
        let (a0, a1) = self.yaw_range_deg;
        if !(0.0 <= z0 && z0 <= z1 && z1.is_finite()) {
            return Err(Error::invalid(format!("bad z range {:?}", self.z_range_m)));
        }
        if !(0.0 <= a0 && a0 <= a1 && a1 < 180.0) {
            return Err(Error::invalid(format!("bad yaw range {:?}", self.yaw_range_deg)));
        }
        self.intrinsics.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Camera>,
}

impl Trajectory {
    pub fn new(frames: Vec<Camera>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("trajectory needs at least one frame"));
        }
        for f in &frames {
            f.intrinsics.validate()?;
            f.extrinsics.validate()?;
        }
        Ok(Trajectory { frames })
    }

    /// All frames at one pose.
    pub fn constant(camera: Camera, n_frames: usize) -> Result<Self> {
        Trajectory::new(vec![camera; n_frames])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> &Camera {
        self.frames.last().expect("non-empty")
    }

    /// Rectified rig whose left camera is frame `t`.
    pub fn rig_at(&self, t: usize, baseline: f64) -> Result<StereoRig> {
        let cam = &self.frames[t];
        StereoRig::rectified(cam.intrinsics, cam.extrinsics, baseline)
    }
}

pub fn sample_trajectory(rng: &mut Rng, n_frames: usize, cfg: &TrajectoryConfig) -> Result<Trajectory> {
    if n_frames < 2 {
        return Err(Error::invalid(format!("trajectory needs n_frames >= 2, got {n_frames}")));
    }
    cfg.validate()?;
    let z = rng.sign() * rng.uniform_range(cfg.z_range_m.0, cfg.z_range_m.1);
    let yaw = rng.sign() * rng.uniform_range(cfg.yaw_range_deg.0, cfg.yaw_range_deg.1).to_radians();

    let end_rot = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    let end_q = UnitQuaternion::from_rotation_matrix(&end_rot);
    let end_t = Vector3::new(0.0, 0.0, z);
    let last = n_frames - 1;
    let frames = (0..n_frames)
        .map(|k| {
            let extrinsics = if k == 0 {
                Extrinsics::identity()
            } else if k == last {
                Extrinsics {
                    rotation: *end_rot.matrix(),
                    translation: end_t,
                }
            } else {
                let s = k as f64 / last as f64;
                let q = UnitQuaternion::identity().slerp(&end_q, s);
                Extrinsics {
                    rotation: *q.to_rotation_matrix().matrix(),
                    translation: end_t * s,
                }
            };
            Camera::new(cfg.intrinsics, extrinsics)
        })
        .collect();
    Trajectory::new(frames)
}

/// On-disk trajectory: `{"baseline_m", "frames": [{"K": [9], "T": [16]}]}`,
/// matrices row-major. `image_size` is optional and defaults to the smallest
/// extent that contains the principal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub baseline_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[u32; 2]>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "T")]
    pub t: [f64; 16],
}

impl TrajectoryFile {
    pub fn from_trajectory(traj: &Trajectory, baseline_m: f64) -> Self {
        let k0 = traj.frames[0].intrinsics;
        let frames = traj
            .frames
            .iter()
            .map(|c| {
                let k = c.intrinsics.matrix();
                let t = c.extrinsics.matrix();
                FrameRecord {
                    k: std::array::from_fn(|i| k[(i / 3, i % 3)]),
                    t: std::array::from_fn(|i| t[(i / 4, i % 4)]),
                }
            })
            .collect();
        TrajectoryFile {
            baseline_m,
            image_size: Some([k0.width, k0.height]),
            frames,
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        if !(self.baseline_m > 0.0) {
            return Err(Error::invalid("baseline_m must be positive"));
        }
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let k = Matrix3::from_row_slice(&f.k);
                if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
                    return Err(Error::invalid("K must be [[fx,0,cx],[0,fy,cy],[0,0,1]]"));
                }
                let (cx, cy) = (k[(0, 2)], k[(1, 2)]);
                let [w, h] = self
                    .image_size
                    .unwrap_or([cx.floor() as u32 + 1, cy.floor() as u32 + 1]);
                let intr = Intrinsics::new(k[(0, 0)], k[(1, 1)], cx, cy, w, h)?;
                let ext = Extrinsics::from_matrix(&Matrix4::from_row_slice(&f.t))?;
                Ok(Camera::new(intr, ext))
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(frames)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_ranges_hold() {
        let cfg = TrajectoryConfig::default();
        for seed in 0..500 {
            let tr = sample_trajectory(&mut Rng::new(seed), 49, &cfg).unwrap();
            assert_eq!(tr.len(), 49);
            let end = tr.last().extrinsics;
            let z = end.translation.z.abs();
            let yaw = end.yaw_deg().abs();
            assert!((4.0..=20.0).contains(&z), "z={z}");
            assert!((50.0..=150.0).contains(&yaw), "yaw={yaw}");
            assert_eq!(tr.frames[0].extrinsics.matrix(), Matrix4::identity());
        }
    }

    #[test]
    fn interpolation_is_monotone() {
        let tr = sample_trajectory(&mut Rng::new(8), 9, &TrajectoryConfig::default()).unwrap();
        let end = tr.last().extrinsics;
        for (k, cam) in tr.frames.iter().enumerate() {
            let s = k as f64 / 8.0;
            assert!((cam.extrinsics.translation.z - s * end.translation.z).abs() < 1e-12);
            assert!((cam.extrinsics.yaw_deg() - s * end.yaw_deg()).abs() < 1e-9);
            cam.extrinsics.validate().unwrap();
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = TrajectoryConfig::default();
        let a = sample_trajectory(&mut Rng::new(1), 49, &cfg).unwrap();
        let b = sample_trajectory(&mut Rng::new(1), 49, &cfg).unwrap();
        assert_eq!(a, b);
        let fa = TrajectoryFile::from_trajectory(&a, 0.063).to_json();
        let fb = TrajectoryFile::from_trajectory(&b, 0.063).to_json();
        assert_eq!(fa, fb);
    }

    #[test]
    fn too_few_frames() {
        assert!(sample_trajectory(&mut Rng::new(1), 1, &TrajectoryConfig::default()).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let tr = sample_trajectory(&mut Rng::new(21), 7, &TrajectoryConfig::default()).unwrap();
        let file = TrajectoryFile::from_trajectory(&tr, 0.063);
        let parsed = TrajectoryFile::from_json(&file.to_json()).unwrap();
        assert_eq!(parsed, file);
        assert_eq!(parsed.to_trajectory().unwrap(), tr);
    }

    #[test]
    fn json_schema_keys() {
        let tr = sample_trajectory(&mut Rng::new(2), 2, &TrajectoryConfig::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&TrajectoryFile::from_trajectory(&tr, 0.1).to_json()).unwrap();
        assert_eq!(v["baseline_m"], 0.1);
        assert_eq!(v["frames"][0]["K"].as_array().unwrap().len(), 9);
        assert_eq!(v["frames"][0]["T"].as_array().unwrap().len(), 16);
        let bad = r#"{"baseline_m":0.1,"frames":[],"extra":1}"#;
        assert!(TrajectoryFile::from_json(bad).is_err());
    }
}
