//! Pinhole cameras, rectified stereo rigs and the 4×4 projective matrices
//! used by the camera rotary block.
//!
//! Conventions: extrinsics map world to camera (`x_cam = R·x_world + t`),
//! right-handed, camera looking down +z, image x to the right.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point, square pixels.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self> {
        Intrinsics::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Focal lengths divided by image extent, principal point mapped to
    /// `[-0.5, 0.5]`.
    pub fn normalized_matrix(&self) -> Matrix3<f64> {
        let w = self.width as f64;
        let h = self.height as f64;
        Matrix3::new(
            self.fx / w,
            0.0,
            self.cx / w - 0.5,
            0.0,
            self.fy / h,
            self.cy / h - 0.5,
            0.0,
            0.0,
            1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let e = Extrinsics {
            rotation,
            translation,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn identity() -> Self {
        Extrinsics {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "extrinsics not a proper rigid transform (|RᵀR-I|={ortho:e}, det={det})"
            )));
        }
        Ok(())
    }

    pub fn from_matrix(t: &Matrix4<f64>) -> Result<Self> {
        let bottom = t.fixed_view::<1, 4>(3, 0);
        if (bottom - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).abs().max() > ORTHO_TOL {
            return Err(Error::invalid("extrinsics: last row must be [0 0 0 1]"));
        }
        Extrinsics::new(t.fixed_view::<3, 3>(0, 0).into_owned(), t.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Rotation angle about the y axis, in degrees, for a yaw-only rotation.
    pub fn yaw_deg(&self) -> f64 {
        self.rotation[(0, 2)].atan2(self.rotation[(0, 0)]).to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Self {
        Camera {
            intrinsics,
            extrinsics,
        }
    }

    pub fn projective_matrix(&self, policy: NormalizationPolicy) -> Result<Matrix4<f64>> {
        projective_matrix(self, policy)
    }
}

/// How raw camera values are scaled before entering attention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalizationPolicy {
    /// Pixel intrinsics and metric translations as given.
    Raw,
    /// Intrinsics divided by image size, translations by `scene_scale`.
    Normalized { scene_scale: f64 },
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy::Normalized { scene_scale: 20.0 }
    }
}

/// Whether the key-side camera block uses the transpose or the inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    Transpose,
    #[default]
    Inverse,
}

/// `P = [[K, 0], [0, 1]] · T`, with `K` and the translation column of `T`
/// scaled according to `policy`.
pub fn projective_matrix(cam: &Camera, policy: NormalizationPolicy) -> Result<Matrix4<f64>> {
    let (k, mut t) = (
        match policy {
            NormalizationPolicy::Raw => cam.intrinsics.matrix(),
            NormalizationPolicy::Normalized { .. } => cam.intrinsics.normalized_matrix(),
        },
        cam.extrinsics.matrix(),
    );
    if let NormalizationPolicy::Normalized { scene_scale } = policy {
        if !(scene_scale > 0.0) {
            return Err(Error::invalid("scene_scale must be positive"));
        }
        for r in 0..3 {
            t[(r, 3)] /= scene_scale;
        }
    }
    projective_from_parts(&k, &t)
}

/// Embeds a 3×3 intrinsic matrix into 4×4 and multiplies by a 4×4 transform.
pub fn projective_from_parts(k: &Matrix3<f64>, t: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let det = k.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::Singular("projective_matrix"));
    }
    let mut k4 = Matrix4::identity();
    k4.fixed_view_mut::<3, 3>(0, 0).copy_from(k);
    Ok(k4 * t)
}

/// Relative transform between two projective matrices: `P1·P2ᵀ` or `P1·P2⁻¹`.
pub fn relative_transform(p1: &Matrix4<f64>, p2: &Matrix4<f64>, variant: Composition) -> Result<Matrix4<f64>> {
    match variant {
        Composition::Transpose => Ok(p1 * p2.transpose()),
        Composition::Inverse => {
            let inv = p2.try_inverse().ok_or(Error::Singular("relative_transform"))?;
            Ok(p1 * inv)
        }
    }
}

/// Rectified stereo pair: shared intrinsics and rotation, right center offset
/// by `baseline` along the camera x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: Camera,
    pub right: Camera,
    pub baseline: f64,
}

impl StereoRig {
    pub fn rectified(intrinsics: Intrinsics, left: Extrinsics, baseline: f64) -> Result<Self> {
        if !(baseline > 0.0 && baseline.is_finite()) {
            return Err(Error::invalid(format!("baseline must be positive, got {baseline}")));
        }
        intrinsics.validate()?;
        left.validate()?;
        let right = Extrinsics {
            rotation: left.rotation,
            translation: left.translation - Vector3::new(baseline, 0.0, 0.0),
        };
        Ok(StereoRig {
            left: Camera::new(intrinsics, left),
            right: Camera::new(intrinsics, right),
            baseline,
        })
    }

    pub fn camera(&self, view: usize) -> &Camera {
        if view == 0 {
            &self.left
        } else {
            &self.right
        }
    }
}

/// Rectified disparity `fx·b/Z` in pixels.
pub fn disparity_from_depth(depth: f64, rig: &StereoRig) -> Result<f64> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("depth must be positive, got {depth}")));
    }
    Ok(rig.left.intrinsics.fx * rig.baseline / depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use nalgebra::{Rotation3, Unit};

    fn unit_k() -> Intrinsics {
        // K = I needs cx = cy = 0, which is inside [0, width).
        Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap()
    }

    fn random_rigid(rng: &mut Rng) -> Extrinsics {
        let axis = Unit::new_normalize(Vector3::new(rng.normal(), rng.normal(), rng.normal()));
        let r = Rotation3::from_axis_angle(&axis, rng.uniform_range(-3.0, 3.0));
        Extrinsics::new(
            *r.matrix(),
            Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 3.0,
        )
        .unwrap()
    }

    #[test]
    fn identity_camera_gives_identity() {
        let cam = Camera::new(unit_k(), Extrinsics::identity());
        assert_eq!(projective_matrix(&cam, NormalizationPolicy::Raw).unwrap(), Matrix4::identity());
    }

    #[test]
    fn block_embedding() {
        let k = Intrinsics::new(2.0, 2.0, 0.0, 0.0, 4, 4).unwrap();
        let p = projective_matrix(&Camera::new(k, Extrinsics::identity()), NormalizationPolicy::Raw).unwrap();
        assert_eq!(p, Matrix4::from_diagonal(&nalgebra::Vector4::new(2.0, 2.0, 1.0, 1.0)));
    }

    #[test]
    fn rig_relative_translation_is_baseline() {
        let rig = StereoRig::rectified(unit_k(), Extrinsics::identity(), 0.3).unwrap();
        let pl = projective_matrix(&rig.left, NormalizationPolicy::Raw).unwrap();
        let pr = projective_matrix(&rig.right, NormalizationPolicy::Raw).unwrap();
        let rel = relative_transform(&pl, &pr, Composition::Inverse).unwrap();
        let expected = Matrix4::new_translation(&Vector3::new(0.3, 0.0, 0.0));
        assert!((rel - expected).abs().max() < 1e-15);
        // right center sits at +b along the left camera's x axis
        assert!((rig.right.extrinsics.center() - Vector3::new(0.3, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn self_relative_is_identity() {
        let mut rng = Rng::new(2);
        let p = Matrix4::from_fn(|_, _| rng.normal()) + Matrix4::identity() * 4.0;
        let rel = relative_transform(&p, &p, Composition::Inverse).unwrap();
        assert!((rel - Matrix4::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn variants_agree_on_rotations() {
        let mut rng = Rng::new(3);
        let r1 = random_rigid(&mut rng);
        let r2 = random_rigid(&mut rng);
        let mut p1 = Matrix4::identity();
        p1.fixed_view_mut::<3, 3>(0, 0).copy_from(&r1.rotation);
        let mut p2 = Matrix4::identity();
        p2.fixed_view_mut::<3, 3>(0, 0).copy_from(&r2.rotation);
        let a = relative_transform(&p1, &p2, Composition::Transpose).unwrap();
        let b = relative_transform(&p1, &p2, Composition::Inverse).unwrap();
        assert!((a - b).abs().max() < 1e-12);
    }

    #[test]
    fn inverse_variant_is_rigid_composition() {
        // For rigid T1, T2 the relative pose T1·T2⁻¹ is (R1R2ᵀ, t1 - R1R2ᵀt2).
        let mut rng = Rng::new(4);
        let e1 = random_rigid(&mut rng);
        let e2 = random_rigid(&mut rng);
        let rel = relative_transform(&e1.matrix(), &e2.matrix(), Composition::Inverse).unwrap();
        let r = e1.rotation * e2.rotation.transpose();
        let t = e1.translation - r * e2.translation;
        let expected = Extrinsics { rotation: r, translation: t }.matrix();
        assert!((rel - expected).abs().max() < 1e-12);
    }

    #[test]
    fn singular_inverse_is_reported() {
        let z = Matrix4::zeros();
        assert!(matches!(
            relative_transform(&Matrix4::identity(), &z, Composition::Inverse),
            Err(Error::Singular(_))
        ));
        assert!(relative_transform(&Matrix4::identity(), &z, Composition::Transpose).is_ok());
    }

    #[test]
    fn world_frame_change_cancels() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let k = Intrinsics::new(rng.uniform_range(50.0, 500.0), rng.uniform_range(50.0, 500.0), 10.0, 7.0, 64, 48).unwrap();
            let e1 = random_rigid(&mut rng);
            let e2 = random_rigid(&mut rng);
            let g = Matrix4::from_fn(|_, _| rng.normal()) + Matrix4::identity() * 3.0;
            let p1 = projective_from_parts(&k.matrix(), &e1.matrix()).unwrap();
            let p2 = projective_from_parts(&k.matrix(), &e2.matrix()).unwrap();
            let q1 = projective_from_parts(&k.matrix(), &(e1.matrix() * g)).unwrap();
            let q2 = projective_from_parts(&k.matrix(), &(e2.matrix() * g)).unwrap();
            let a = relative_transform(&p1, &p2, Composition::Inverse).unwrap();
            let b = relative_transform(&q1, &q2, Composition::Inverse).unwrap();
            assert!((a - b).abs().max() <= 1e-9 * a.abs().max().max(1.0));
        }
    }

    #[test]
    fn normalization_maps_principal_point() {
        let k = Intrinsics::new(32.0, 16.0, 16.0, 8.0, 32, 16).unwrap();
        let n = k.normalized_matrix();
        assert_eq!(n, Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0));
        let e = Extrinsics::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 10.0)).unwrap();
        let p = projective_matrix(&Camera::new(k, e), NormalizationPolicy::Normalized { scene_scale: 20.0 }).unwrap();
        assert_eq!(p[(2, 3)], 0.5);
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(Extrinsics::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(Extrinsics::new(reflect, Vector3::zeros()).is_err());
        assert!(StereoRig::rectified(unit_k(), Extrinsics::identity(), 0.0).is_err());
    }

    #[test]
    fn disparity_examples() {
        let k = Intrinsics::new(100.0, 100.0, 10.0, 10.0, 64, 64).unwrap();
        let rig = StereoRig::rectified(k, Extrinsics::identity(), 0.25).unwrap();
        assert_eq!(disparity_from_depth(25.0, &rig).unwrap(), 1.0);
        assert!(disparity_from_depth(1e12, &rig).unwrap() < 1e-9);
        assert!(disparity_from_depth(0.0, &rig).is_err());
        assert!(disparity_from_depth(-1.0, &rig).is_err());

        let k = Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap();
        let rig = StereoRig::rectified(k, Extrinsics::identity(), 0.063).unwrap();
        assert!((disparity_from_depth(2.016, &rig).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn disparity_monotone_in_depth() {
        let k = Intrinsics::new(100.0, 100.0, 10.0, 10.0, 64, 64).unwrap();
        let rig = StereoRig::rectified(k, Extrinsics::identity(), 0.5).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let d = disparity_from_depth(i as f64 * 0.37, &rig).unwrap();
            assert!(d < prev);
            prev = d;
        }
    }
}
