//! Property suites run by `stereoworld check`.

use nalgebra::{Matrix4, Rotation3, Vector3};
use serde::Serialize;

use crate::attention::kv_cache::{causal_step, KVCache};
use crate::attention::{
    attend, causal_stereo_attention, full_4d_attention, intra_view_attention, layer_backward, layer_forward, masked_dense_oracle,
    masks, row_attention, row_attention_widened, stereo_attention, AttentionParams, Branch, TokenGrid,
};
use crate::camera::{
    disparity_from_depth, projective_matrix, relative_transform, Camera, Composition, Extrinsics, Intrinsics,
    NormalizationPolicy, StereoRig,
};
use crate::dit::train::{gradient_check, loss_and_grad, Example};
use crate::dit::{InitStrategy, ToyModel, ToyModelConfig};
use crate::dit::flow::{draw_state, FlowState};
use crate::error::Result;
use crate::flops::{count_macs, flops_decomposed, ShapeSpec};
use crate::gradcheck::{fd_gradient, rel_error};
use crate::rng::Rng;
use crate::rope::{rope_1d, rope_3d, unified_apply, unified_logit, RopeConfig, RopeTables, Side, TokenPosition, View};
use crate::tensor::{Array, Scalar};
use crate::trajectory::{sample_trajectory, TrajectoryConfig, TrajectoryFile};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Property {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Property {
    fn within(name: &'static str, err: f64, tol: f64) -> Self {
        Property {
            name,
            passed: err.is_finite() && err <= tol,
            detail: format!("max error {err:.3e} (tolerance {tol:.0e})"),
        }
    }

    fn check(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Property {
            name,
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &'static str, tol: f64, r: Result<f64>) -> Self {
        match r {
            Ok(err) => Property::within(name, err, tol),
            Err(e) => Property::check(name, false, format!("error: {e}")),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn random_rigid(rng: &mut Rng) -> Extrinsics {
    let axis = Vector3::new(rng.normal(), rng.normal(), rng.normal());
    let angle = rng.uniform_range(-3.0, 3.0);
    let rot = Rotation3::from_scaled_axis(axis.normalize() * angle);
    Extrinsics {
        rotation: *rot.matrix(),
        translation: Vector3::new(rng.normal(), rng.normal(), rng.normal()) * 2.0,
    }
}

fn random_camera(rng: &mut Rng) -> Camera {
    let k = Intrinsics::new(
        rng.uniform_range(200.0, 600.0),
        rng.uniform_range(200.0, 600.0),
        rng.uniform_range(100.0, 540.0),
        rng.uniform_range(100.0, 380.0),
        640,
        480,
    )
    .expect("valid random intrinsics");
    Camera::new(k, random_rigid(rng))
}

/// Composes a rigid world transform `G` into a camera: `T ↦ T·G`.
fn transformed(cam: &Camera, g: &Extrinsics) -> Camera {
    let t = cam.extrinsics.matrix() * g.matrix();
    Camera::new(cam.intrinsics, Extrinsics::from_matrix(&t).expect("rigid composition"))
}

fn random_position(rng: &mut Rng, camera: Option<Matrix4<f64>>) -> TokenPosition {
    let r = |rng: &mut Rng| rng.below(41) as i64 - 20;
    TokenPosition::new(View::from_index(rng.below(2)), r(rng), r(rng), r(rng), camera)
}

fn camera_position(rng: &mut Rng, policy: NormalizationPolicy) -> Result<TokenPosition> {
    let cam = projective_matrix(&random_camera(rng), policy)?;
    Ok(random_position(rng, Some(cam)))
}

fn encoded_logit(q: &[f64], k: &[f64], pq: &TokenPosition, pk: &TokenPosition, cfg: &RopeConfig) -> Result<f64> {
    let qe = unified_apply(q, pq, cfg, Side::Query)?;
    let ke = unified_apply(k, pk, cfg, Side::Key)?;
    Ok(dot(&qe, &ke))
}

pub fn rope_suite(seed: u64, cfg: &RopeConfig) -> Vec<Property> {
    let mut rng = Rng::new(seed);
    let policy = NormalizationPolicy::Raw;
    let dim = cfg.dim();
    let mut out = Vec::new();

    out.push(Property::from_result("rope_1d_preserves_norm", 1e-12, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let v = random_vec(&mut rng, 16);
            let pos = rng.below(2001) as i64 - 1000;
            let r = rope_1d(&v, pos, cfg.theta_base)?;
            worst = worst.max((dot(&r, &r).sqrt() - dot(&v, &v).sqrt()).abs());
        }
        Ok(worst)
    })()));

    for (name, axis) in [("shift_invariance_t", 0), ("shift_invariance_x", 1), ("shift_invariance_y", 2)] {
        out.push(Property::from_result(name, 1e-6, (|| {
            let mut worst: f64 = 0.0;
            for _ in 0..1000 {
                let cam_q = projective_matrix(&random_camera(&mut rng), policy)?;
                let cam_k = projective_matrix(&random_camera(&mut rng), policy)?;
                let (q, k) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
                let pq = random_position(&mut rng, Some(cam_q));
                let pk = random_position(&mut rng, Some(cam_k));
                let s = rng.below(201) as i64 - 100;
                let d = [(s, 0, 0), (0, s, 0), (0, 0, s)][axis];
                let a = encoded_logit(&q, &k, &pq, &pk, cfg)?;
                let b = encoded_logit(&q, &k, &pq.shifted(d.0, d.1, d.2), &pk.shifted(d.0, d.1, d.2), cfg)?;
                worst = worst.max((a - b).abs());
            }
            Ok(worst)
        })()));
    }

    let inverse = cfg.clone().with_variant(Composition::Inverse);
    let world = |rng: &mut Rng, cfg: &RopeConfig| -> Result<f64> {
        let (c1, c2) = (random_camera(rng), random_camera(rng));
        let g = random_rigid(rng);
        let (q, k) = (random_vec(rng, dim), random_vec(rng, dim));
        let pq = random_position(rng, Some(projective_matrix(&c1, policy)?));
        let pk = random_position(rng, Some(projective_matrix(&c2, policy)?));
        let pq2 = TokenPosition {
            camera: Some(projective_matrix(&transformed(&c1, &g), policy)?),
            ..pq
        };
        let pk2 = TokenPosition {
            camera: Some(projective_matrix(&transformed(&c2, &g), policy)?),
            ..pk
        };
        let a = encoded_logit(&q, &k, &pq, &pk, cfg)?;
        let b = encoded_logit(&q, &k, &pq2, &pk2, cfg)?;
        Ok(rel_error(a, b, 1.0))
    };
    out.push(Property::from_result("world_frame_invariance_inverse", 1e-6, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            worst = worst.max(world(&mut rng, &inverse)?);
        }
        Ok(worst)
    })()));
    if cfg.d_c > 0 {
        let transpose = cfg.clone().with_variant(Composition::Transpose);
        let r = (0..20).map(|_| world(&mut rng, &transpose)).collect::<Result<Vec<f64>>>();
        out.push(match r {
            Ok(errs) => {
                let worst = errs.iter().cloned().fold(0.0, f64::max);
                Property::check(
                    "transpose_variant_is_frame_dependent",
                    worst > 1e-6,
                    format!("largest change under a world transform {worst:.3e}"),
                )
            }
            Err(e) => Property::check("transpose_variant_is_frame_dependent", false, format!("error: {e}")),
        });
    }

    out.push(Property::from_result("fast_path_matches_explicit_kernel", 1e-9, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let (q, k) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
            let pq = camera_position(&mut rng, NormalizationPolicy::default())?;
            let pk = camera_position(&mut rng, NormalizationPolicy::default())?;
            let fast = encoded_logit(&q, &k, &pq, &pk, cfg)?;
            let slow = unified_logit(&q, &k, &pq, &pk, cfg)?;
            worst = worst.max(rel_error(fast, slow, 1.0));
        }
        Ok(worst)
    })()));

    out.push(Property::from_result("tables_match_per_token_path", 1e-12, (|| {
        let positions: Vec<TokenPosition> = (0..64)
            .map(|_| {
                let cam = projective_matrix(&random_camera(&mut rng), NormalizationPolicy::default()).expect("camera");
                random_position(&mut rng, Some(cam))
            })
            .collect();
        let tables = RopeTables::<f64>::new(&positions, cfg)?;
        let mut worst: f64 = 0.0;
        for (i, p) in positions.iter().enumerate() {
            for side in [Side::Query, Side::Key] {
                let v = random_vec(&mut rng, dim);
                let mut fast = v.clone();
                tables.apply(side, i, &mut fast);
                let slow = unified_apply(&v, p, cfg, side)?;
                worst = worst.max(fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
        }
        Ok(worst)
    })()));

    out.push(Property::from_result("zero_camera_dims_reduce_to_3d_rope", 0.0, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let mut q = random_vec(&mut rng, dim);
            let k = random_vec(&mut rng, dim);
            q[cfg.d..].iter_mut().for_each(|v| *v = 0.0);
            let pq = camera_position(&mut rng, policy)?;
            let pk = camera_position(&mut rng, policy)?;
            let full = encoded_logit(&q, &k, &pq, &pk, cfg)?;
            let base = dot(&rope_3d(&q[..cfg.d], &pq, cfg)?, &rope_3d(&k[..cfg.d], &pk, cfg)?);
            worst = worst.max((full - base).abs());
        }
        Ok(worst)
    })()));
    out
}

pub fn camera_suite(seed: u64) -> Vec<Property> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    out.push(Property::from_result("projective_matrix_is_k_times_t", 1e-12, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let cam = random_camera(&mut rng);
            let p = projective_matrix(&cam, NormalizationPolicy::Raw)?;
            let mut k4 = Matrix4::identity();
            k4.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.intrinsics.matrix());
            worst = worst.max((p - k4 * cam.extrinsics.matrix()).abs().max());
        }
        Ok(worst)
    })()));

    out.push(Property::from_result("normalized_intrinsics", 1e-15, (|| {
        let k = Intrinsics::new(400.0, 300.0, 320.0, 240.0, 640, 480)?;
        let n = k.normalized_matrix();
        let expected = [400.0 / 640.0, 300.0 / 480.0, 0.0, 0.0];
        Ok([(n[(0, 0)], expected[0]), (n[(1, 1)], expected[1]), (n[(0, 2)], expected[2]), (n[(1, 2)], expected[3])]
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    })()));

    out.push(Property::from_result("relative_transform_world_invariance", 1e-9, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let (c1, c2, g) = (random_camera(&mut rng), random_camera(&mut rng), random_rigid(&mut rng));
            let pol = NormalizationPolicy::default();
            let a = relative_transform(&projective_matrix(&c1, pol)?, &projective_matrix(&c2, pol)?, Composition::Inverse)?;
            let b = relative_transform(
                &projective_matrix(&transformed(&c1, &g), pol)?,
                &projective_matrix(&transformed(&c2, &g), pol)?,
                Composition::Inverse,
            )?;
            worst = worst.max((a - b).abs().max() / a.abs().max().max(1.0));
        }
        Ok(worst)
    })()));

    out.push(Property::from_result("self_relative_is_identity", 1e-12, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let p = projective_matrix(&random_camera(&mut rng), NormalizationPolicy::default())?;
            worst = worst.max((relative_transform(&p, &p, Composition::Inverse)? - Matrix4::identity()).abs().max());
        }
        Ok(worst)
    })()));

    out.push(Property::from_result("rig_disparity_matches_projection", 1e-9, (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let cam = random_camera(&mut rng);
            let b = rng.uniform_range(0.05, 1.0);
            let rig = StereoRig::rectified(cam.intrinsics, cam.extrinsics, b)?;
            let z = rng.uniform_range(1.0, 20.0);
            // a point at camera-frame depth z in front of the left camera
            let local = Vector3::new(rng.normal(), rng.normal(), z);
            let world = rig.left.extrinsics.rotation.transpose() * (local - rig.left.extrinsics.translation);
            let project = |c: &Camera| {
                let p = c.extrinsics.rotation * world + c.extrinsics.translation;
                (c.intrinsics.fx * p.x / p.z + c.intrinsics.cx, c.intrinsics.fy * p.y / p.z + c.intrinsics.cy)
            };
            let (l, r) = (project(&rig.left), project(&rig.right));
            let d = disparity_from_depth(z, &rig)?;
            worst = worst.max(((l.0 - r.0) - d).abs()).max((l.1 - r.1).abs());
        }
        Ok(worst)
    })()));

    out.push((|| -> Result<Property> {
        let cfg = TrajectoryConfig::default();
        let (mut pos_z, mut neg_z, mut pos_yaw, mut neg_yaw, mut inside) = (false, false, false, false, true);
        for s in 0..1000 {
            let tr = sample_trajectory(&mut Rng::new(seed.wrapping_add(s)), 49, &cfg)?;
            let end = tr.last().extrinsics;
            let (z, yaw) = (end.translation.z, end.yaw_deg());
            inside &= (4.0..=20.0).contains(&z.abs()) && (50.0..=150.0).contains(&yaw.abs());
            pos_z |= z > 0.0;
            neg_z |= z < 0.0;
            pos_yaw |= yaw > 0.0;
            neg_yaw |= yaw < 0.0;
        }
        let both = pos_z && neg_z && pos_yaw && neg_yaw;
        Ok(Property::check(
            "trajectory_endpoint_ranges",
            inside && both,
            format!("all endpoints in range: {inside}; both signs seen: {both}"),
        ))
    })()
    .unwrap_or_else(|e| Property::check("trajectory_endpoint_ranges", false, format!("error: {e}"))));

    out.push((|| -> Result<Property> {
        let make = || -> Result<String> {
            let tr = sample_trajectory(&mut Rng::new(seed), 49, &TrajectoryConfig::default())?;
            Ok(TrajectoryFile::from_trajectory(&tr, 0.063).to_json())
        };
        let (a, b) = (make()?, make()?);
        let parsed = TrajectoryFile::from_json(&a)?;
        Ok(Property::check(
            "trajectory_file_deterministic_round_trip",
            a == b && parsed.to_json() == a,
            "regenerated and re-serialized files compared byte for byte",
        ))
    })()
    .unwrap_or_else(|e| Property::check("trajectory_file_deterministic_round_trip", false, format!("error: {e}"))));
    out
}

pub(crate) fn random_grid<T: Scalar>(rng: &mut Rng, f: usize, h: usize, w: usize, c: usize) -> Result<TokenGrid<T>> {
    let values = rng.normal_array(&[2, f, h, w, c], 1.0);
    let k = Intrinsics::centered(w as f64, w as u32, h as u32)?;
    let mut traj = Vec::with_capacity(f);
    for _ in 0..f {
        let e = random_rigid(rng);
        traj.push(Camera::new(k, e));
    }
    let traj = crate::trajectory::Trajectory::new(traj)?;
    TokenGrid::with_trajectory(values, &traj, rng.uniform_range(0.05, 0.5), NormalizationPolicy::default())
}

/// Grid extents `(f, h, w)` with at most 256 tokens over both views.
pub(crate) fn random_extents(rng: &mut Rng) -> (usize, usize, usize) {
    loop {
        let (f, h, w) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(8));
        if 2 * f * h * w <= 256 {
            return (f, h, w);
        }
    }
}

fn max_diff<T: Scalar>(a: &TokenGrid<T>, b: &TokenGrid<T>) -> Result<f64> {
    a.values().max_abs_diff(b.values())
}

/// `row_band > 0` widens the row branch's key set: a deliberately broken
/// kernel that the row oracle property must catch.
pub fn attention_suite(seed: u64, cfg: &RopeConfig, row_band: usize) -> Vec<Property> {
    let mut out = Vec::new();
    let cases = 20;
    let setup = |i: u64| -> Result<(TokenGrid<f64>, AttentionParams<f64>)> {
        let mut rng = Rng::new(seed).fork(i);
        let (f, h, w) = random_extents(&mut rng);
        let c = 4;
        let grid = random_grid(&mut rng, f, h, w, c)?;
        let params = AttentionParams::random(&mut rng, c, c, 2, cfg);
        Ok((grid, params))
    };
    let over_cases = |f: &dyn Fn(&TokenGrid<f64>, &AttentionParams<f64>) -> Result<f64>| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..cases {
            let (g, p) = setup(i)?;
            worst = worst.max(f(&g, &p)?);
        }
        Ok(worst)
    };

    out.push(Property::from_result("intra_view_matches_oracle", 1e-9, over_cases(&|g, p| {
        max_diff(&intra_view_attention(g, p, cfg)?, &masked_dense_oracle(g, p, cfg, masks::same_view)?)
    })));
    out.push(Property::from_result("row_matches_oracle", 1e-9, over_cases(&|g, p| {
        let row = if row_band == 0 {
            row_attention(g, p, cfg)?
        } else {
            row_attention_widened(g, p, cfg, row_band)?
        };
        max_diff(&row, &masked_dense_oracle(g, p, cfg, masks::same_row)?)
    })));
    out.push(Property::from_result("full4d_matches_oracle", 1e-9, over_cases(&|g, p| {
        max_diff(&full_4d_attention(g, p, cfg)?, &masked_dense_oracle(g, p, cfg, masks::all)?)
    })));
    out.push(Property::from_result("stereo_is_intra_plus_row", 1e-9, over_cases(&|g, p| {
        let sum = intra_view_attention(g, p, cfg)?.values().add(row_attention(g, p, cfg)?.values())?;
        stereo_attention(g, p, cfg)?.values().max_abs_diff(&sum)
    })));
    out.push(Property::from_result("causal_matches_oracle", 1e-9, over_cases(&|g, p| {
        let a = masked_dense_oracle(g, p, cfg, masks::same_view_causal)?;
        let b = masked_dense_oracle(g, p, cfg, masks::same_row)?;
        causal_stereo_attention(g, p, cfg)?.values().max_abs_diff(&a.values().add(b.values())?)
    })));
    out.push(Property::from_result("f32_kernels_match_f64_oracle", 1e-5, over_cases(&|g, p| {
        let g32 = TokenGrid::<f32>::new(g.values().cast(), g.cameras().to_vec())?;
        let p32 = AttentionParams {
            wq: p.wq.cast(),
            wk: p.wk.cast(),
            wv: p.wv.cast(),
            wo: p.wo.cast(),
            heads: p.heads,
            d: p.d,
            d_c: p.d_c,
        };
        // the reference sees the same rounded inputs
        let g64 = TokenGrid::<f64>::new(g32.values().cast(), g.cameras().to_vec())?;
        let p64 = AttentionParams {
            wq: p32.wq.cast(),
            wk: p32.wk.cast(),
            wv: p32.wv.cast(),
            wo: p32.wo.cast(),
            ..p.clone()
        };
        let intra = intra_view_attention(&g32, &p32, cfg)?.values().cast::<f64>();
        let row = row_attention(&g32, &p32, cfg)?.values().cast::<f64>();
        let e1 = intra.max_abs_diff(masked_dense_oracle(&g64, &p64, cfg, masks::same_view)?.values())?;
        let e2 = row.max_abs_diff(masked_dense_oracle(&g64, &p64, cfg, masks::same_row)?.values())?;
        Ok(e1.max(e2))
    })));
    out.push(Property::from_result("view_swap_equivariance", 1e-12, over_cases(&|g, p| {
        let a = stereo_attention(&g.swap_views(), p, cfg)?;
        let b = stereo_attention(g, p, cfg)?.swap_views();
        max_diff(&a, &b)
    })));
    out.push(Property::from_result("kv_cache_rollout_matches_one_shot", 1e-12, (|| {
        let mut rng = Rng::new(seed).fork(1000);
        let grid: TokenGrid<f64> = random_grid(&mut rng, 6, 2, 3, 4)?;
        let params = AttentionParams::random(&mut rng, 4, 4, 2, cfg);
        let full = causal_stereo_attention(&grid, &params, cfg)?;
        let mut worst: f64 = 0.0;
        for chunk in [1, 2, 3] {
            let mut cache = KVCache::default();
            let mut outs = Vec::new();
            for start in (0..6).step_by(chunk) {
                let (o, c) = causal_step(cache, &grid.slice_frames(start, chunk)?, &params, cfg)?;
                cache = c;
                outs.push(o);
            }
            worst = worst.max(max_diff(&TokenGrid::concat_frames(&outs)?, &full)?);
        }
        Ok(worst)
    })()));
    out.push((|| -> Result<Property> {
        let mut rng = Rng::new(seed).fork(2000);
        let plain = RopeConfig::new(cfg.d, 0)?;
        let mut ok = true;
        for _ in 0..5 {
            let (f, h, w) = random_extents(&mut rng);
            let grid = TokenGrid::<f64>::without_cameras(rng.normal_array(&[2, f, h, w, 4], 1.0))?;
            let params = AttentionParams::random(&mut rng, 4, 4, 1, &plain);
            let shape = ShapeSpec::new(1, f as u64, h as u64, w as u64, cfg.d as u64)?;
            let r = flops_decomposed(shape, 0)?;
            let run = |b: Branch| count_macs(|c| attend(&grid, &params, &plain, b, Some(c)).map(|_| ()));
            ok &= run(Branch::Full4D)? == r.analytic_full4d
                && run(Branch::IntraView)? == r.analytic_3d
                && run(Branch::Row)? == r.analytic_row_grouped;
        }
        Ok(Property::check("mac_counts_match_formulas", ok, "counted score/value products vs closed forms"))
    })()
    .unwrap_or_else(|e| Property::check("mac_counts_match_formulas", false, format!("error: {e}"))));
    out
}

pub fn grad_suite(seed: u64, cfg: &RopeConfig) -> Vec<Property> {
    let mut out = Vec::new();
    for (name, branch) in [
        ("attention_backward_stereo", Branch::Stereo),
        ("attention_backward_full4d", Branch::Full4D),
        ("attention_backward_causal", Branch::CausalStereo),
    ] {
        out.push(Property::from_result(name, 1e-6, (|| {
            let mut rng = Rng::new(seed).fork(branch as u64);
            let grid: TokenGrid<f64> = random_grid(&mut rng, 2, 2, 3, 4)?;
            let params = AttentionParams::random(&mut rng, 4, 4, 2, cfg);
            attention_grad_error(&grid, &params, cfg, branch, &mut rng)
        })()));
    }

    let small = ToyModelConfig {
        layers: 2,
        heads: 1,
        head_dim: 12,
        camera_dim: 4,
        time_features: 4,
        ..Default::default()
    };
    out.push(Property::from_result("model_backward_sampled", 1e-5, (|| {
        let mut rng = Rng::new(seed).fork(10);
        let model = ToyModel::<f64>::init(small.clone(), seed)?;
        let ex = model_example(&mut rng, &model)?;
        Ok(gradient_check(&model, &ex, 1, 6, &mut rng, 1e-5)?.max_rel_error)
    })()));
    out.push(Property::from_result("linear_model_exact", 1e-9, (|| {
        let mut rng = Rng::new(seed).fork(11);
        let cfg = ToyModelConfig {
            layers: 0,
            final_norm: false,
            ..small.clone()
        };
        let model = ToyModel::<f64>::init(cfg, seed)?;
        let ex = model_example(&mut rng, &model)?;
        // the loss is quadratic in each single weight, so central differences
        // are exact up to rounding
        Ok(gradient_check(&model, &ex, 1, 50, &mut rng, 0.5)?.max_rel_error)
    })()));
    out.push((|| -> Result<Property> {
        let mut rng = Rng::new(seed).fork(12);
        let cfg = ToyModelConfig {
            init: InitStrategy::Zero,
            ..small.clone()
        };
        let model = ToyModel::<f64>::init(cfg.clone(), seed)?;
        let ex = model_example(&mut rng, &model)?;
        let (_, grads) = loss_and_grad(&model, &ex, 1)?;
        let wide = cfg.head_dim + cfg.camera_dim;
        let mut smallest = f64::INFINITY;
        for l in 0..cfg.layers {
            let g = grads.get(&format!("blocks.{l}.attn.wq"))?;
            for h in 0..cfg.heads {
                let cols = h * wide + cfg.head_dim..(h + 1) * wide;
                let norm: f64 = (0..g.shape()[0])
                    .flat_map(|r| g.row(r)[cols.clone()].iter().map(|v| v * v).collect::<Vec<_>>())
                    .sum::<f64>()
                    .sqrt();
                smallest = smallest.min(norm);
            }
        }
        Ok(Property::check(
            "zero_init_camera_gradients_nonzero",
            smallest > 1e-8,
            format!("smallest per-head camera-column gradient norm {smallest:.3e}"),
        ))
    })()
    .unwrap_or_else(|e| Property::check("zero_init_camera_gradients_nonzero", false, format!("error: {e}"))));
    out
}

fn model_example(rng: &mut Rng, model: &ToyModel<f64>) -> Result<Example<f64>> {
    let clean: TokenGrid<f64> = random_grid(rng, 2, 2, 3, model.config().channels)?;
    let state: FlowState<f64> = draw_state(rng, &clean)?;
    Ok(Example { clean, state })
}

/// Largest relative error between the analytic input/weight gradients of one
/// layer and central differences of `⟨y, probe⟩`.
pub fn attention_grad_error(
    grid: &TokenGrid<f64>,
    params: &AttentionParams<f64>,
    cfg: &RopeConfig,
    branch: Branch,
    rng: &mut Rng,
) -> Result<f64> {
    let dims = grid.dims();
    let tables = RopeTables::new(&grid.positions(), cfg)?;
    let frames = grid.frames();
    let x = grid.features();
    let probe: Array<f64> = rng.normal_array(&[dims.tokens(), params.c_out()], 1.0);
    let (_, tape) = layer_forward(&x, params, &tables, &frames, &dims, branch, None)?;
    let (dx, grads) = layer_backward(&tape, params, &tables, &probe)?;
    let eval = |x: &Array<f64>, p: &AttentionParams<f64>| -> Result<f64> {
        layer_forward(x, p, &tables, &frames, &dims, branch, None)?.0.dot(&probe)
    };
    let compare = |an: &Array<f64>, fd: &Array<f64>| {
        an.data()
            .iter()
            .zip(fd.data())
            .map(|(a, b)| rel_error(*a, *b, 1e-3))
            .fold(0.0, f64::max)
    };
    let eps = 1e-5;
    let mut worst = compare(&dx, &fd_gradient(|x| eval(x, params), &x, eps)?);
    for (which, an) in [(0, &grads.wq), (1, &grads.wk), (2, &grads.wv), (3, &grads.wo)] {
        let base = [&params.wq, &params.wk, &params.wv, &params.wo][which].clone();
        let fd = fd_gradient(
            |w| {
                let mut p = params.clone();
                *[&mut p.wq, &mut p.wk, &mut p.wv, &mut p.wo][which] = w.clone();
                eval(&x, &p)
            },
            &base,
            eps,
        )?;
        worst = worst.max(compare(an, &fd));
    }
    Ok(worst)
}

/// Runs `suite` and returns its properties.
pub fn run_suite(suite: super::Suite, seed: u64, cfg: &RopeConfig, row_band: usize) -> Vec<Property> {
    match suite {
        super::Suite::Rope => rope_suite(seed, cfg),
        super::Suite::Camera => camera_suite(seed),
        super::Suite::Attention => attention_suite(seed, cfg, row_band),
        super::Suite::Grad => grad_suite(seed, cfg),
    }
}
