//! Closed-form attention cost of joint versus decomposed stereo attention.
//!
//! cargo run --example flops_table -- [d]

use stereoworld::flops::{flops_decomposed, measure, ShapeSpec, CSV_HEADER};

fn main() -> stereoworld::Result<()> {
    let d: u64 = std::env::args().nth(1).map(|s| s.parse().expect("d")).unwrap_or(128);
    println!("{CSV_HEADER}");
    for (f, h, w) in [(13, 15, 20), (13, 30, 40), (21, 30, 52), (4, 8, 8)] {
        let r = flops_decomposed(ShapeSpec::new(1, f, h, w, d)?, 0)?;
        println!("{}", r.csv_row());
    }

    // counted multiply-adds of the real kernels on a small grid
    let shape = ShapeSpec::new(1, 4, 4, 8, 16)?;
    let r = flops_decomposed(shape, 0)?;
    let e = measure(shape, 0)?;
    println!();
    println!("counted at {shape:?}:");
    println!("  full 4D    {:>10}  (closed form {})", e.full4d, r.analytic_full4d);
    println!("  intra-view {:>10}  (closed form {})", e.attn3d, r.analytic_3d);
    println!("  row        {:>10}  (grouped form {})", e.row, r.analytic_row_grouped);
    println!("  ratio      {:>10.3}", e.ratio);
    Ok(())
}
