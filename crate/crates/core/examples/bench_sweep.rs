//! Times joint versus stereo-decomposed attention and checks counted
//! multiply-adds against the closed forms.
//!
//! cargo run --release --example bench_sweep -- [repeats]

use stereoworld::harness::{bench_csv, bench_sweep, SWEEP};

fn main() -> stereoworld::Result<()> {
    let repeats: usize = std::env::args().nth(1).map(|s| s.parse().expect("repeats")).unwrap_or(7);
    let rows = bench_sweep(&SWEEP, 0, repeats)?;
    print!("{}", bench_csv(&rows));
    let slower: Vec<_> = rows
        .iter()
        .filter(|r| r.shape.f * r.shape.h >= 4 && r.speedup() <= 1.0)
        .map(|r| (r.shape.f, r.shape.h, r.shape.w))
        .collect();
    println!("shapes with f*h >= 4 where stereo was not faster: {slower:?}");
    Ok(())
}
