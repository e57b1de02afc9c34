//! Trains the toy model, then generates continuations of held-out
//! single-plane scenes and checks that the generated right view is the
//! generated left view shifted by the true disparity.
//!
//! cargo run --release --example stereo_consistency -- [steps] [seed]

use stereoworld::dit::{disparity_checks, SampleOptions, SceneConfig, TrainConfig, Trainer};

fn main() -> stereoworld::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(2000);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);
    let cfg = TrainConfig {
        seed,
        steps,
        ..Default::default()
    };
    let eval_scenes = SceneConfig {
        planes: (1, 1),
        depth_range: (2.5, 4.0),
        baseline_range: (0.8, 1.0),
        ..cfg.scene.clone()
    };
    let policy = cfg.model.normalization;
    let mut trainer = Trainer::<f32>::new(cfg)?;
    let report = |trainer: &Trainer<f32>, label: &str| -> stereoworld::Result<()> {
        let checks = disparity_checks(&trainer.model, &eval_scenes, policy, 1, 8, 1234, SampleOptions::default(), 1.0)?;
        let ok = checks.iter().filter(|c| c.within_tolerance).count();
        println!("{label}: {ok}/{} scenes within 1 px", checks.len());
        for c in &checks {
            println!("  scene {}: true {:.2} px, measured {} px", c.scene, c.expected, c.estimated);
        }
        Ok(())
    };
    report(&trainer, "untrained")?;
    trainer.run_until(steps, |rec| {
        if rec.step % 500 == 0 {
            println!("step {:5}  loss {:.4}", rec.step, rec.loss);
        }
        Ok(())
    })?;
    report(&trainer, "trained")?;
    Ok(())
}
