//! Rotary position encodings for stereo video tokens.
//!
//! A query/key vector of length `d + d_c` is split in two parts:
//!
//! * the first `d` dims carry a factorized 3-axis RoPE. They are partitioned
//!   into `[t | x | y]` sub-blocks and each sub-block is rotated pairwise by
//!   `pos_axis · θ_n`, `θ_n = base^(-2n / d_axis)`;
//! * the last `d_c` dims carry the camera block: `d_c / 4` copies of the 4×4
//!   projective matrix `P` of the token's (view, frame) camera.
//!
//! Vectors are rows. The query side maps each 4-chunk `u ↦ u·P`, the key side
//! maps `u ↦ u·P⁻ᵀ` ([`Composition::Inverse`]) or `u ↦ u·P`
//! ([`Composition::Transpose`]). The dot product of a transformed query and
//! key therefore equals `q̃ · blkdiag(R_{Δ}, I ⊗ P₁P₂⁻¹) · k̃ᵀ`, which depends
//! only on relative positions and the relative camera transform.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::camera::{relative_transform, Composition};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Per-axis share of the rotary dims, laid out `[t | x | y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisPartition {
    pub t: usize,
    pub x: usize,
    pub y: usize,
}

impl AxisPartition {
    /// Even split with x and y sharing `⌊d/3⌋` rounded down to even and t
    /// taking the remainder.
    pub fn even(d: usize) -> Self {
        let s = (d / 3) & !1;
        AxisPartition { t: d - 2 * s, x: s, y: s }
    }

    pub fn total(&self) -> usize {
        self.t + self.x + self.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnabledAxes {
    pub t: bool,
    pub x: bool,
    pub y: bool,
}

impl Default for EnabledAxes {
    fn default() -> Self {
        EnabledAxes {
            t: true,
            x: true,
            y: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeConfig {
    /// Rotary head dimension.
    pub d: usize,
    /// Appended camera dimension.
    pub d_c: usize,
    pub partition: AxisPartition,
    pub theta_base: f64,
    pub variant: Composition,
    #[serde(default)]
    pub enabled_axes: EnabledAxes,
}

impl RopeConfig {
    pub fn new(d: usize, d_c: usize) -> Result<Self> {
        let cfg = RopeConfig {
            d,
            d_c,
            partition: AxisPartition::even(d),
            theta_base: 10_000.0,
            variant: Composition::Inverse,
            enabled_axes: EnabledAxes::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_variant(mut self, variant: Composition) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.partition;
        if self.d % 2 != 0 {
            return Err(Error::invalid(format!("rope: d must be even, got {}", self.d)));
        }
        if self.d_c % 4 != 0 {
            return Err(Error::invalid(format!("rope: d_c must be divisible by 4, got {}", self.d_c)));
        }
        if p.total() != self.d || p.t % 2 != 0 || p.x % 2 != 0 || p.y % 2 != 0 {
            return Err(Error::invalid(format!("rope: bad partition {p:?} for d={}", self.d)));
        }
        if !(self.theta_base > 0.0 && self.theta_base.is_finite()) {
            return Err(Error::invalid("rope: theta_base must be positive"));
        }
        Ok(())
    }

    /// Total expanded dimension `d + d_c`.
    pub fn dim(&self) -> usize {
        self.d + self.d_c
    }

    /// Rotation angle for each of the `d/2` rotary pairs at `(t, x, y)`.
    pub fn angles(&self, t: i64, x: i64, y: i64) -> Vec<f64> {
        let p = self.partition;
        let e = self.enabled_axes;
        let mut out = Vec::with_capacity(self.d / 2);
        for (share, pos, on) in [(p.t, t, e.t), (p.x, x, e.x), (p.y, y, e.y)] {
            let freqs = axis_frequencies(share, self.theta_base);
            out.extend(freqs.iter().map(|f| if on { pos as f64 * f } else { 0.0 }));
        }
        out
    }
}

/// `θ_n = base^(-2n / d_axis)` for `n = 0..d_axis/2`.
pub fn axis_frequencies(d_axis: usize, base: f64) -> Vec<f64> {
    (0..d_axis / 2)
        .map(|n| base.powf(-2.0 * n as f64 / d_axis as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
}

impl View {
    pub fn index(self) -> usize {
        match self {
            View::Left => 0,
            View::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            View::Left
        } else {
            View::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Key,
}

/// Where a token sits: view, frame, grid cell and the projective matrix of
/// its (view, frame) camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenPosition {
    pub view: View,
    pub t: i64,
    pub x: i64,
    pub y: i64,
    pub camera: Option<Matrix4<f64>>,
}

impl TokenPosition {
    pub fn new(view: View, t: i64, x: i64, y: i64, camera: Option<Matrix4<f64>>) -> Self {
        TokenPosition { view, t, x, y, camera }
    }

    /// Shifted copy.
    pub fn shifted(&self, dt: i64, dx: i64, dy: i64) -> Self {
        TokenPosition {
            t: self.t + dt,
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

fn rotate_pairs<T: Scalar>(v: &mut [T], angles: &[f64]) {
    for (pair, &a) in v.chunks_exact_mut(2).zip(angles) {
        let (s, c) = a.sin_cos();
        let (s, c) = (T::of_f64(s), T::of_f64(c));
        let (x0, x1) = (pair[0], pair[1]);
        pair[0] = x0 * c - x1 * s;
        pair[1] = x0 * s + x1 * c;
    }
}

/// Pairwise rotation of `(v[2n], v[2n+1])` by `pos · freqs[n]`.
pub fn rope_1d_with<T: Scalar>(v: &[T], pos: i64, freqs: &[f64]) -> Result<Vec<T>> {
    if v.len() % 2 != 0 {
        return Err(Error::invalid(format!("rope_1d: odd dimension {}", v.len())));
    }
    if freqs.len() != v.len() / 2 {
        return Err(Error::invalid("rope_1d: one frequency per pair required"));
    }
    let angles: Vec<f64> = freqs.iter().map(|f| pos as f64 * f).collect();
    let mut out = v.to_vec();
    rotate_pairs(&mut out, &angles);
    Ok(out)
}

/// 1-D RoPE with `θ_n = theta_base^(-2n / len)`.
pub fn rope_1d<T: Scalar>(v: &[T], pos: i64, theta_base: f64) -> Result<Vec<T>> {
    if v.len() % 2 != 0 {
        return Err(Error::invalid(format!("rope_1d: odd dimension {}", v.len())));
    }
    rope_1d_with(v, pos, &axis_frequencies(v.len(), theta_base))
}

/// Factorized RoPE over the `[t | x | y]` sub-blocks of a length-`d` vector.
pub fn rope_3d<T: Scalar>(v: &[T], pos: &TokenPosition, cfg: &RopeConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    if v.len() != cfg.d {
        return Err(Error::invalid(format!("rope_3d: expected {} dims, got {}", cfg.d, v.len())));
    }
    let mut out = v.to_vec();
    rotate_pairs(&mut out, &cfg.angles(pos.t, pos.x, pos.y));
    Ok(out)
}

/// `I_{d_c/4} ⊗ P`: block-diagonal with `d_c / 4` copies of `P`.
pub fn camera_block(p: &Matrix4<f64>, d_c: usize) -> Result<DMatrix<f64>> {
    if d_c % 4 != 0 {
        return Err(Error::invalid(format!("camera_block: d_c must be divisible by 4, got {d_c}")));
    }
    let mut m = DMatrix::zeros(d_c, d_c);
    for b in 0..d_c / 4 {
        m.view_mut((4 * b, 4 * b), (4, 4)).copy_from(p);
    }
    Ok(m)
}

/// 4×4 map applied to each camera chunk, as `out = A · u` on column chunks.
fn camera_chunk_map(p: &Matrix4<f64>, side: Side, variant: Composition) -> Result<Matrix4<f64>> {
    match (side, variant) {
        // u·P  ==  Pᵀ·u
        (Side::Query, _) | (Side::Key, Composition::Transpose) => Ok(p.transpose()),
        // u·P⁻ᵀ  ==  P⁻¹·u
        (Side::Key, Composition::Inverse) => p.try_inverse().ok_or(Error::Singular("unified_apply")),
    }
}

fn apply_chunks<T: Scalar>(cam: &mut [T], a: &Matrix4<f64>) {
    for chunk in cam.chunks_exact_mut(4) {
        let u: [f64; 4] = std::array::from_fn(|i| chunk[i].as_f64());
        for (r, out) in chunk.iter_mut().enumerate() {
            *out = T::of_f64((0..4).map(|c| a[(r, c)] * u[c]).sum());
        }
    }
}

/// Encodes one query or key vector of length `d + d_c`.
pub fn unified_apply<T: Scalar>(v: &[T], pos: &TokenPosition, cfg: &RopeConfig, side: Side) -> Result<Vec<T>> {
    cfg.validate()?;
    if v.len() != cfg.dim() {
        return Err(Error::invalid(format!("unified_apply: expected {} dims, got {}", cfg.dim(), v.len())));
    }
    let mut out = rope_3d(&v[..cfg.d], pos, cfg)?;
    if cfg.d_c > 0 {
        let p = pos
            .camera
            .ok_or_else(|| Error::invalid("unified_apply: camera required when d_c > 0"))?;
        let mut cam = v[cfg.d..].to_vec();
        apply_chunks(&mut cam, &camera_chunk_map(&p, side, cfg.variant)?);
        out.extend(cam);
    }
    Ok(out)
}

/// Explicit `d×d` rotary matrix for row vectors (`v ↦ v·R`).
fn rotary_matrix(angles: &[f64]) -> DMatrix<f64> {
    let d = 2 * angles.len();
    let mut r = DMatrix::zeros(d, d);
    for (n, &a) in angles.iter().enumerate() {
        let (s, c) = a.sin_cos();
        let i = 2 * n;
        r[(i, i)] = c;
        r[(i, i + 1)] = s;
        r[(i + 1, i)] = -s;
        r[(i + 1, i + 1)] = c;
    }
    r
}

/// Reference logit `q̃ · R̃₁ · R̃₂ᵀ · k̃ᵀ` built from explicit matrices.
///
/// Slow; this is the oracle for the per-token [`unified_apply`] path.
pub fn unified_logit(
    q: &[f64],
    k: &[f64],
    pos_q: &TokenPosition,
    pos_k: &TokenPosition,
    cfg: &RopeConfig,
) -> Result<f64> {
    cfg.validate()?;
    let dim = cfg.dim();
    if q.len() != dim || k.len() != dim {
        return Err(Error::invalid(format!("unified_logit: expected {dim} dims")));
    }
    let r1 = rotary_matrix(&cfg.angles(pos_q.t, pos_q.x, pos_q.y));
    let r2 = rotary_matrix(&cfg.angles(pos_k.t, pos_k.x, pos_k.y));
    let mut kernel = DMatrix::zeros(dim, dim);
    kernel.view_mut((0, 0), (cfg.d, cfg.d)).copy_from(&(r1 * r2.transpose()));
    if cfg.d_c > 0 {
        let missing = || Error::invalid("unified_logit: camera required when d_c > 0");
        let p1 = pos_q.camera.ok_or_else(missing)?;
        let p2 = pos_k.camera.ok_or_else(missing)?;
        let rel = relative_transform(&p1, &p2, cfg.variant)?;
        kernel
            .view_mut((cfg.d, cfg.d), (cfg.d_c, cfg.d_c))
            .copy_from(&camera_block(&rel, cfg.d_c)?);
    }
    let qv = nalgebra::DVector::from_column_slice(q);
    let kv = nalgebra::DVector::from_column_slice(k);
    Ok((qv.transpose() * kernel * kv)[(0, 0)])
}

/// Precomputed per-token rotations and per-camera chunk maps for a batch of
/// positions. Applies the same transform as [`unified_apply`] in place, plus
/// its transpose for backward passes.
#[derive(Debug, Clone)]
pub struct RopeTables<T> {
    d: usize,
    d_c: usize,
    cos: Vec<T>,
    sin: Vec<T>,
    slot: Vec<usize>,
    cam_q: Vec<[T; 16]>,
    cam_k: Vec<[T; 16]>,
}

impl<T: Scalar> RopeTables<T> {
    pub fn new(positions: &[TokenPosition], cfg: &RopeConfig) -> Result<Self> {
        cfg.validate()?;
        let half = cfg.d / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        let mut slot = Vec::with_capacity(positions.len());
        let mut cams: Vec<Matrix4<f64>> = Vec::new();
        let mut cam_q = Vec::new();
        let mut cam_k = Vec::new();
        for pos in positions {
            for a in cfg.angles(pos.t, pos.x, pos.y) {
                let (s, c) = a.sin_cos();
                cos.push(T::of_f64(c));
                sin.push(T::of_f64(s));
            }
            if cfg.d_c == 0 {
                slot.push(0);
                continue;
            }
            let p = pos
                .camera
                .ok_or_else(|| Error::invalid("rope tables: camera required when d_c > 0"))?;
            let idx = match cams.iter().position(|c| *c == p) {
                Some(i) => i,
                None => {
                    let to_arr = |m: Matrix4<f64>| -> [T; 16] { std::array::from_fn(|i| T::of_f64(m[(i / 4, i % 4)])) };
                    cam_q.push(to_arr(camera_chunk_map(&p, Side::Query, cfg.variant)?));
                    cam_k.push(to_arr(camera_chunk_map(&p, Side::Key, cfg.variant)?));
                    cams.push(p);
                    cams.len() - 1
                }
            };
            slot.push(idx);
        }
        Ok(RopeTables {
            d: cfg.d,
            d_c: cfg.d_c,
            cos,
            sin,
            slot,
            cam_q,
            cam_k,
        })
    }

    pub fn len(&self) -> usize {
        self.slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d + self.d_c
    }

    fn cam(&self, side: Side, token: usize) -> &[T; 16] {
        match side {
            Side::Query => &self.cam_q[self.slot[token]],
            Side::Key => &self.cam_k[self.slot[token]],
        }
    }

    /// Encodes `v` (length `d + d_c`) for `token` in place.
    pub fn apply(&self, side: Side, token: usize, v: &mut [T]) {
        self.transform(side, token, v, false)
    }

    /// Applies the transpose of [`apply`](Self::apply) in place.
    pub fn apply_transpose(&self, side: Side, token: usize, g: &mut [T]) {
        self.transform(side, token, g, true)
    }

    fn transform(&self, side: Side, token: usize, v: &mut [T], transpose: bool) {
        debug_assert_eq!(v.len(), self.dim());
        let half = self.d / 2;
        let cos = &self.cos[token * half..(token + 1) * half];
        let sin = &self.sin[token * half..(token + 1) * half];
        for ((pair, &c), &s) in v[..self.d].chunks_exact_mut(2).zip(cos).zip(sin) {
            let (x0, x1) = (pair[0], pair[1]);
            if transpose {
                pair[0] = x0 * c + x1 * s;
                pair[1] = x1 * c - x0 * s;
            } else {
                pair[0] = x0 * c - x1 * s;
                pair[1] = x0 * s + x1 * c;
            }
        }
        if self.d_c == 0 {
            return;
        }
        let a = self.cam(side, token);
        for chunk in v[self.d..].chunks_exact_mut(4) {
            let u = [chunk[0], chunk[1], chunk[2], chunk[3]];
            for (r, out) in chunk.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (c, &uc) in u.iter().enumerate() {
                    let m = if transpose { a[c * 4 + r] } else { a[r * 4 + c] };
                    acc += m * uc;
                }
                *out = acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn random_p(rng: &mut Rng) -> Matrix4<f64> {
        Matrix4::from_fn(|_, _| rng.normal() * 0.5) + Matrix4::identity() * 2.0
    }

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn partition_even_split() {
        assert_eq!(AxisPartition::even(32), AxisPartition { t: 12, x: 10, y: 10 });
        assert_eq!(AxisPartition::even(34), AxisPartition { t: 14, x: 10, y: 10 });
        assert_eq!(AxisPartition::even(6), AxisPartition { t: 2, x: 2, y: 2 });
        assert_eq!(AxisPartition::even(4), AxisPartition { t: 4, x: 0, y: 0 });
        for d in (2..200).step_by(2) {
            let p = AxisPartition::even(d);
            assert_eq!(p.total(), d);
            assert!(p.t % 2 == 0 && p.x % 2 == 0 && p.t >= p.x);
        }
    }

    #[test]
    fn config_validation() {
        assert!(RopeConfig::new(7, 0).is_err());
        assert!(RopeConfig::new(8, 6).is_err());
        let mut c = RopeConfig::new(8, 4).unwrap();
        c.partition = AxisPartition { t: 3, x: 3, y: 2 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_position_is_identity() {
        let v = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(rope_1d(&v, 0, 10_000.0).unwrap(), v.to_vec());
        let cfg = RopeConfig::new(12, 0).unwrap();
        let w: Vec<f64> = (0..12).map(|i| i as f64 - 3.0).collect();
        let pos = TokenPosition::new(View::Left, 0, 0, 0, None);
        assert_eq!(rope_3d(&w, &pos, &cfg).unwrap(), w);
    }

    #[test]
    fn quarter_turn() {
        let out = rope_1d_with(&[1.0f64, 0.0], 1, &[std::f64::consts::FRAC_PI_2]).unwrap();
        assert!((out[0] - 0.0).abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(rope_1d(&[1.0f64, 2.0, 3.0], 1, 10_000.0).is_err());
    }

    #[test]
    fn rope_1d_relative() {
        let mut rng = Rng::new(1);
        for _ in 0..200 {
            let q = rand_vec(&mut rng, 8);
            let k = rand_vec(&mut rng, 8);
            let (t1, t2, s) = (rng.below(50) as i64, rng.below(50) as i64, rng.below(100) as i64 - 50);
            let a = dot(&rope_1d(&q, t1, 10_000.0).unwrap(), &rope_1d(&k, t2, 10_000.0).unwrap());
            let b = dot(&rope_1d(&q, t1 + s, 10_000.0).unwrap(), &rope_1d(&k, t2 + s, 10_000.0).unwrap());
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rope_norm_preserved() {
        let mut rng = Rng::new(2);
        let cfg = RopeConfig::new(16, 0).unwrap();
        let v = rand_vec(&mut rng, 16);
        let pos = TokenPosition::new(View::Right, 5, 3, 7, None);
        let out = rope_3d(&v, &pos, &cfg).unwrap();
        assert!((dot(&v, &v) - dot(&out, &out)).abs() < 1e-12);
    }

    #[test]
    fn equal_positions_give_plain_dot() {
        let mut rng = Rng::new(3);
        let cfg = RopeConfig::new(16, 0).unwrap();
        let q = rand_vec(&mut rng, 16);
        let k = rand_vec(&mut rng, 16);
        let pos = TokenPosition::new(View::Left, 4, 2, 9, None);
        let a = dot(&rope_3d(&q, &pos, &cfg).unwrap(), &rope_3d(&k, &pos, &cfg).unwrap());
        assert!((a - dot(&q, &k)).abs() < 1e-12);
    }

    #[test]
    fn rope_3d_depends_on_deltas_per_axis() {
        let mut rng = Rng::new(4);
        let cfg = RopeConfig::new(24, 0).unwrap();
        for _ in 0..100 {
            let q = rand_vec(&mut rng, 24);
            let k = rand_vec(&mut rng, 24);
            let p1 = TokenPosition::new(View::Left, rng.below(9) as i64, rng.below(9) as i64, rng.below(9) as i64, None);
            let p2 = TokenPosition::new(View::Left, rng.below(9) as i64, rng.below(9) as i64, rng.below(9) as i64, None);
            let base = dot(&rope_3d(&q, &p1, &cfg).unwrap(), &rope_3d(&k, &p2, &cfg).unwrap());
            for axis in 0..3 {
                let s = rng.below(40) as i64 - 20;
                let sh = [(s, 0, 0), (0, s, 0), (0, 0, s)][axis];
                let a = rope_3d(&q, &p1.shifted(sh.0, sh.1, sh.2), &cfg).unwrap();
                let b = rope_3d(&k, &p2.shifted(sh.0, sh.1, sh.2), &cfg).unwrap();
                assert!((dot(&a, &b) - base).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn disabled_axis_is_identity_on_its_block() {
        let mut cfg = RopeConfig::new(12, 0).unwrap();
        cfg.enabled_axes.x = false;
        let v: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let pos = TokenPosition::new(View::Left, 0, 5, 0, None);
        assert_eq!(rope_3d(&v, &pos, &cfg).unwrap(), v);
    }

    #[test]
    fn camera_block_examples() {
        assert_eq!(camera_block(&Matrix4::identity(), 8).unwrap(), DMatrix::identity(8, 8));
        let mut rng = Rng::new(5);
        let p = random_p(&mut rng);
        let b = camera_block(&p, 8).unwrap();
        assert_eq!(b.view((0, 0), (4, 4)), p);
        assert_eq!(b.view((4, 4), (4, 4)), p);
        assert!(b.view((0, 4), (4, 4)).iter().all(|&v| v == 0.0));
        assert!(camera_block(&p, 6).is_err());
    }

    #[test]
    fn camera_block_is_multiplicative() {
        let mut rng = Rng::new(6);
        let p1 = random_p(&mut rng);
        let p2 = random_p(&mut rng);
        let lhs = camera_block(&p1, 12).unwrap() * camera_block(&p2, 12).unwrap();
        let rhs = camera_block(&(p1 * p2), 12).unwrap();
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn no_camera_dims_reduces_to_rope_3d() {
        let mut rng = Rng::new(7);
        let cfg = RopeConfig::new(12, 0).unwrap();
        let v = rand_vec(&mut rng, 12);
        let pos = TokenPosition::new(View::Left, 2, 1, 3, None);
        assert_eq!(unified_apply(&v, &pos, &cfg, Side::Query).unwrap(), rope_3d(&v, &pos, &cfg).unwrap());
    }

    #[test]
    fn missing_camera_is_an_error() {
        let cfg = RopeConfig::new(8, 4).unwrap();
        let pos = TokenPosition::new(View::Left, 0, 0, 0, None);
        assert!(unified_apply(&[0.0f64; 12], &pos, &cfg, Side::Key).is_err());
    }

    #[test]
    fn identity_cameras_give_plain_camera_dot() {
        let mut rng = Rng::new(8);
        let cfg = RopeConfig::new(8, 8).unwrap();
        let q = rand_vec(&mut rng, 16);
        let k = rand_vec(&mut rng, 16);
        let pos = TokenPosition::new(View::Left, 0, 0, 0, Some(Matrix4::identity()));
        let qa = unified_apply(&q, &pos, &cfg, Side::Query).unwrap();
        let ka = unified_apply(&k, &pos, &cfg, Side::Key).unwrap();
        assert!((dot(&qa[8..], &ka[8..]) - dot(&q[8..], &k[8..])).abs() < 1e-12);
        assert!((unified_logit(&q, &k, &pos, &pos, &cfg).unwrap() - dot(&q, &k)).abs() < 1e-12);
    }

    #[test]
    fn rig_camera_sublogit_uses_relative_transform() {
        use crate::camera::{projective_matrix, Extrinsics, Intrinsics, NormalizationPolicy, StereoRig};
        let mut rng = Rng::new(9);
        let k = Intrinsics::centered(8.0, 16, 16).unwrap();
        let rig = StereoRig::rectified(k, Extrinsics::identity(), 0.5).unwrap();
        let policy = NormalizationPolicy::default();
        let pl = projective_matrix(&rig.left, policy).unwrap();
        let pr = projective_matrix(&rig.right, policy).unwrap();
        let cfg = RopeConfig::new(8, 8).unwrap();
        let q = rand_vec(&mut rng, 16);
        let kk = rand_vec(&mut rng, 16);
        let pos_l = TokenPosition::new(View::Left, 1, 2, 3, Some(pl));
        let pos_r = TokenPosition::new(View::Right, 1, 2, 3, Some(pr));
        let qa = unified_apply(&q, &pos_l, &cfg, Side::Query).unwrap();
        let ka = unified_apply(&kk, &pos_r, &cfg, Side::Key).unwrap();
        let rel = relative_transform(&pl, &pr, Composition::Inverse).unwrap();
        let blk = camera_block(&rel, 8).unwrap();
        let expected = (nalgebra::DVector::from_column_slice(&q[8..]).transpose()
            * blk
            * nalgebra::DVector::from_column_slice(&kk[8..]))[(0, 0)];
        assert!((dot(&qa[8..], &ka[8..]) - expected).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_explicit_oracle() {
        let mut rng = Rng::new(10);
        for variant in [Composition::Inverse, Composition::Transpose] {
            let cfg = RopeConfig::new(12, 8).unwrap().with_variant(variant);
            for _ in 0..200 {
                let q = rand_vec(&mut rng, 20);
                let k = rand_vec(&mut rng, 20);
                let p1 = TokenPosition::new(View::Left, rng.below(8) as i64, rng.below(8) as i64, rng.below(8) as i64, Some(random_p(&mut rng)));
                let p2 = TokenPosition::new(View::Right, rng.below(8) as i64, rng.below(8) as i64, rng.below(8) as i64, Some(random_p(&mut rng)));
                let fast = dot(
                    &unified_apply(&q, &p1, &cfg, Side::Query).unwrap(),
                    &unified_apply(&k, &p2, &cfg, Side::Key).unwrap(),
                );
                let slow = unified_logit(&q, &k, &p1, &p2, &cfg).unwrap();
                assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0), "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn zeroed_camera_dims_give_baseline_logit() {
        let mut rng = Rng::new(11);
        let cfg = RopeConfig::new(12, 8).unwrap();
        let base = RopeConfig::new(12, 0).unwrap();
        let mut q = rand_vec(&mut rng, 20);
        let k = rand_vec(&mut rng, 20);
        q[12..].iter_mut().for_each(|v| *v = 0.0);
        let p1 = TokenPosition::new(View::Left, 3, 1, 4, Some(random_p(&mut rng)));
        let p2 = TokenPosition::new(View::Right, 1, 5, 9, Some(random_p(&mut rng)));
        let full = dot(
            &unified_apply(&q, &p1, &cfg, Side::Query).unwrap(),
            &unified_apply(&k, &p2, &cfg, Side::Key).unwrap(),
        );
        let baseline = dot(&rope_3d(&q[..12], &p1, &base).unwrap(), &rope_3d(&k[..12], &p2, &base).unwrap());
        assert_eq!(full.to_bits(), baseline.to_bits());
    }

    #[test]
    fn tables_match_per_vector_path_and_transpose() {
        let mut rng = Rng::new(12);
        let cfg = RopeConfig::new(12, 8).unwrap();
        let cams = [random_p(&mut rng), random_p(&mut rng)];
        let positions: Vec<_> = (0..10)
            .map(|i| TokenPosition::new(View::from_index(i % 2), i as i64 / 3, i as i64 % 4, 2, Some(cams[i % 2])))
            .collect();
        let tables = RopeTables::<f64>::new(&positions, &cfg).unwrap();
        for side in [Side::Query, Side::Key] {
            for (i, pos) in positions.iter().enumerate() {
                let v = rand_vec(&mut rng, 20);
                let g = rand_vec(&mut rng, 20);
                let mut fast = v.clone();
                tables.apply(side, i, &mut fast);
                let slow = unified_apply(&v, pos, &cfg, side).unwrap();
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12);
                }
                // <A v, g> == <v, Aᵀ g>
                let mut gt = g.clone();
                tables.apply_transpose(side, i, &mut gt);
                assert!((dot(&fast, &g) - dot(&v, &gt)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn world_frame_invariance_inverse_variant() {
        use crate::camera::projective_from_parts;
        use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
        let mut rng = Rng::new(13);
        let cfg = RopeConfig::new(12, 8).unwrap();
        for _ in 0..100 {
            let k = Matrix3::new(1.2, 0.0, 0.1, 0.0, 0.9, -0.05, 0.0, 0.0, 1.0);
            let mut pose = || {
                let axis = Unit::new_normalize(Vector3::new(rng.normal(), rng.normal(), rng.normal()));
                let r = Rotation3::from_axis_angle(&axis, rng.uniform_range(-3.0, 3.0));
                let mut t = Matrix4::identity();
                t.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
                t.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vector3::new(rng.normal(), rng.normal(), rng.normal()));
                t
            };
            let (t1, t2) = (pose(), pose());
            let g = Matrix4::from_fn(|_, _| rng.normal() * 0.3) + Matrix4::identity();
            let q = rand_vec(&mut rng, 20);
            let kk = rand_vec(&mut rng, 20);
            let mk = |t: Matrix4<f64>, view, x| TokenPosition::new(view, 2, x, 1, Some(projective_from_parts(&k, &t).unwrap()));
            let a = unified_logit(&q, &kk, &mk(t1, View::Left, 0), &mk(t2, View::Right, 3), &cfg).unwrap();
            let b = unified_logit(&q, &kk, &mk(t1 * g, View::Left, 0), &mk(t2 * g, View::Right, 3), &cfg).unwrap();
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }
}
