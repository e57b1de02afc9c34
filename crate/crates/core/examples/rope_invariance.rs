//! Camera-aware RoPE logits depend only on relative positions and relative
//! camera poses: shifting both tokens, or moving the whole world, leaves the
//! attention logit unchanged.
//!
//! cargo run --example rope_invariance

use nalgebra::{Rotation3, Vector3};
use stereoworld::camera::{projective_matrix, Camera, Composition, Extrinsics, Intrinsics, NormalizationPolicy};
use stereoworld::rng::Rng;
use stereoworld::rope::{unified_apply, RopeConfig, Side, TokenPosition, View};

fn logit(q: &[f64], k: &[f64], pq: &TokenPosition, pk: &TokenPosition, cfg: &RopeConfig) -> f64 {
    let a = unified_apply(q, pq, cfg, Side::Query).unwrap();
    let b = unified_apply(k, pk, cfg, Side::Key).unwrap();
    a.iter().zip(&b).map(|(x, y)| x * y).sum()
}

fn main() -> stereoworld::Result<()> {
    let mut rng = Rng::new(7);
    let k = Intrinsics::centered(320.0, 640, 480)?;
    let pose = |yaw: f64, x: f64| Extrinsics::new(*Rotation3::from_euler_angles(0.0, yaw, 0.0).matrix(), Vector3::new(x, 0.0, 1.0));
    let (c1, c2) = (Camera::new(k, pose(0.1, 0.0)?), Camera::new(k, pose(-0.3, 0.5)?));
    let world = pose(1.2, -3.0)?;
    let moved = |c: &Camera| -> stereoworld::Result<Camera> {
        Ok(Camera::new(c.intrinsics, Extrinsics::from_matrix(&(c.extrinsics.matrix() * world.matrix()))?))
    };
    let policy = NormalizationPolicy::default();

    for variant in [Composition::Inverse, Composition::Transpose] {
        let cfg = RopeConfig::new(12, 8)?.with_variant(variant);
        let q: Vec<f64> = (0..cfg.dim()).map(|_| rng.normal()).collect();
        let kv: Vec<f64> = (0..cfg.dim()).map(|_| rng.normal()).collect();
        let pq = TokenPosition::new(View::Left, 2, 3, 1, Some(projective_matrix(&c1, policy)?));
        let pk = TokenPosition::new(View::Right, 0, 5, 4, Some(projective_matrix(&c2, policy)?));
        let base = logit(&q, &kv, &pq, &pk, &cfg);
        let shifted = logit(&q, &kv, &pq.shifted(5, -2, 7), &pk.shifted(5, -2, 7), &cfg);
        let pq_w = TokenPosition {
            camera: Some(projective_matrix(&moved(&c1)?, policy)?),
            ..pq
        };
        let pk_w = TokenPosition {
            camera: Some(projective_matrix(&moved(&c2)?, policy)?),
            ..pk
        };
        let rewrld = logit(&q, &kv, &pq_w, &pk_w, &cfg);
        println!("{variant:?}:");
        println!("  logit                 {base:+.12}");
        println!("  after shifting tokens {shifted:+.12}");
        println!("  after moving world    {rewrld:+.12}");
    }
    Ok(())
}
