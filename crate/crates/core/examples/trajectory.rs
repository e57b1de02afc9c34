//! Samples a camera trajectory, prints its endpoint and writes the JSON file.
//!
//! cargo run --example trajectory -- [seed] [out.json]

use stereoworld::container::write_atomic;
use stereoworld::rng::Rng;
use stereoworld::trajectory::{sample_trajectory, TrajectoryConfig, TrajectoryFile};

fn main() -> stereoworld::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let traj = sample_trajectory(&mut Rng::new(seed), 49, &TrajectoryConfig::default())?;
    for (i, cam) in traj.frames[..48].iter().enumerate().step_by(12) {
        let e = cam.extrinsics;
        println!("frame {i:2}: z = {:+7.3} m, yaw = {:+8.3} deg", e.translation.z, e.yaw_deg());
    }
    let end = traj.last().extrinsics;
    println!("frame 48: z = {:+7.3} m, yaw = {:+8.3} deg", end.translation.z, end.yaw_deg());
    let json = TrajectoryFile::from_trajectory(&traj, 0.063).to_json();
    match args.next() {
        Some(path) => {
            write_atomic(path.as_ref(), json.as_bytes())?;
            println!("wrote {path}");
        }
        None => println!("{} bytes of JSON", json.len()),
    }
    Ok(())
}
