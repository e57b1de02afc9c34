//! Adding camera dims with zero init leaves the model's output unchanged;
//! copy init does not.
//!
//! cargo run --example zero_init

use stereoworld::dit::{generate_scene, InitStrategy, SceneConfig, ToyModel, ToyModelConfig};
use stereoworld::rng::Rng;

fn main() -> stereoworld::Result<()> {
    let scene = generate_scene(&mut Rng::new(5), &SceneConfig::default())?;
    let base_cfg = ToyModelConfig::default();
    let grid = scene.grid::<f32>(base_cfg.normalization)?;
    let baseline = ToyModel::<f32>::init(base_cfg.without_camera(), 11)?;
    let reference = baseline.forward(&grid, 0.4, 1)?;
    println!("baseline parameters: {}", baseline.params.count());
    for init in [InitStrategy::Zero, InitStrategy::Copy] {
        let model = ToyModel::<f32>::init(ToyModelConfig { init, ..base_cfg.clone() }, 11)?;
        let out = model.forward(&grid, 0.4, 1)?;
        println!(
            "{init:?}: {} parameters, max |output - baseline| = {:.2e}",
            model.params.count(),
            out.max_abs_diff(&reference)?
        );
    }
    Ok(())
}
