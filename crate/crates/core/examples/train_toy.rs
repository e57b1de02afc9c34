//! Trains the toy stereo model on synthetic planes and reports held-out loss.
//!
//! cargo run --release --example train_toy -- [steps] [seed]

use stereoworld::dit::{TrainConfig, Trainer};

fn main() -> stereoworld::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(2000);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);
    let cfg = TrainConfig {
        seed,
        steps,
        ..Default::default()
    };
    let mut trainer = Trainer::<f32>::new(cfg)?;
    let before = trainer.held_out_loss()?;
    println!("held-out loss before: {before:.4}");
    trainer.run_until(steps, |rec| {
        if rec.step % 100 == 0 {
            println!("step {:5}  loss {:.4}  {:.0} ms", rec.step, rec.loss, rec.wall_ms);
        }
        Ok(())
    })?;
    let after = trainer.held_out_loss()?;
    println!("held-out loss after:  {after:.4} ({:.1}% of initial)", 100.0 * after / before);
    Ok(())
}
