//! Trains a small model for a few steps, saves a checkpoint, reloads it and
//! samples a stereo continuation with both attention modes.
//!
//! cargo run --release --example sample_video -- [steps]

use stereoworld::attention::AttentionMode;
use stereoworld::dit::{estimate_disparity, generate_scene, load_model, sample, SampleOptions, TrainConfig, Trainer};
use stereoworld::rng::Rng;

fn main() -> stereoworld::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().expect("steps")).unwrap_or(200);
    let dir = std::env::temp_dir().join("stereoworld-sample-video");
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = TrainConfig {
        steps,
        ..Default::default()
    };
    let mut trainer = Trainer::<f32>::new(cfg.clone())?;
    trainer.run_until(steps, |_| Ok(()))?;
    trainer.save(&dir)?;
    println!("checkpoint at {}", dir.display());

    let scene = generate_scene(&mut Rng::new(99), &cfg.scene)?;
    let condition = scene.grid::<f32>(cfg.model.normalization)?;
    for mode in [AttentionMode::StereoDecomposed, AttentionMode::Full4D] {
        let model = load_model::<f32>(&dir)?.with_attention(mode);
        let out = sample(&model, &condition, cfg.cond_frames, SampleOptions::default(), &mut Rng::new(1))?;
        let d = estimate_disparity(out.values(), cfg.cond_frames, cfg.scene.width as i64 / 2)?;
        println!(
            "{mode:?}: output {:?}, estimated disparity {d} px (scene: {:.2} px at frame 1)",
            out.values().shape(),
            scene.disparity.get(&[1, 0, 0])
        );
    }
    Ok(())
}
