//! Wall-clock and multiply-add sweep of joint versus decomposed attention.

use std::time::Instant;

use serde::Serialize;

use crate::attention::{attend, AttentionParams, Branch, TokenGrid};
use crate::error::Result;
use crate::flops::{count_macs, flops_decomposed, ShapeSpec};
use crate::rng::Rng;
use crate::rope::RopeConfig;
use crate::tensor::Array;

/// `(f, h, w)` of the default sweep, all at `b = 1`, `d = 32`.
pub const SWEEP: [(u64, u64, u64); 20] = [
    (1, 1, 32),
    (1, 2, 32),
    (1, 3, 32),
    (1, 4, 32),
    (1, 4, 64),
    (1, 8, 32),
    (2, 1, 32),
    (2, 2, 32),
    (2, 2, 64),
    (2, 4, 32),
    (2, 4, 64),
    (2, 8, 32),
    (3, 2, 32),
    (3, 4, 32),
    (4, 1, 32),
    (4, 1, 64),
    (4, 2, 32),
    (4, 4, 32),
    (8, 2, 32),
    (8, 4, 32),
];

pub const BENCH_D: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub shape: ShapeSpec,
    pub macs_full4d: u128,
    pub macs_stereo: u128,
    pub formula_full4d: u128,
    /// Intra-view term plus `f·h` row groups of `2w` tokens.
    pub formula_stereo: u128,
    pub ms_full4d: f64,
    pub ms_stereo: f64,
}

impl BenchRow {
    pub fn mac_error_full4d(&self) -> f64 {
        rel(self.macs_full4d, self.formula_full4d)
    }

    pub fn mac_error_stereo(&self) -> f64 {
        rel(self.macs_stereo, self.formula_stereo)
    }

    pub fn speedup(&self) -> f64 {
        self.ms_full4d / self.ms_stereo
    }

    pub fn csv_row(&self) -> String {
        let s = self.shape;
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.4},{:.4},{:.3}",
            s.b,
            s.f,
            s.h,
            s.w,
            s.d,
            self.macs_full4d,
            self.macs_stereo,
            self.formula_full4d,
            self.formula_stereo,
            self.mac_error_full4d(),
            self.mac_error_stereo(),
            self.ms_full4d,
            self.ms_stereo,
            self.speedup()
        )
    }
}

fn rel(a: u128, b: u128) -> f64 {
    (a as f64 - b as f64).abs() / (b as f64)
}

pub const BENCH_CSV_HEADER: &str = "b,f,h,w,d,macs_full4d,macs_stereo,formula_full4d,formula_stereo,\
mac_err_full4d,mac_err_stereo,ms_full4d,ms_stereo,speedup";

/// Times one shape: minimum over `repeats` runs of each variant, in f32, one
/// head, no camera dims.
pub fn bench_shape(shape: ShapeSpec, seed: u64, repeats: usize) -> Result<BenchRow> {
    let d = shape.d as usize;
    let cfg = RopeConfig::new(d, 0)?;
    let mut rng = Rng::new(seed);
    let c = 4;
    let params = AttentionParams::<f32>::random(&mut rng, c, c, 1, &cfg);
    let values: Array<f32> = rng.normal_array(&[2, shape.f as usize, shape.h as usize, shape.w as usize, c], 1.0);
    let grid = TokenGrid::without_cameras(values)?;
    let count = |branch: Branch| {
        count_macs(|counter| {
            for _ in 0..shape.b {
                attend(&grid, &params, &cfg, branch, Some(counter))?;
            }
            Ok(())
        })
    };
    let time = |branch: Branch| -> Result<f64> {
        let start = Instant::now();
        for _ in 0..shape.b {
            std::hint::black_box(attend(&grid, &params, &cfg, branch, None)?);
        }
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    let (mut ms_full4d, mut ms_stereo) = (f64::INFINITY, f64::INFINITY);
    // interleaved so both variants see the same machine state
    for _ in 0..repeats.max(1) {
        ms_full4d = ms_full4d.min(time(Branch::Full4D)?);
        ms_stereo = ms_stereo.min(time(Branch::Stereo)?);
    }
    let (macs_full4d, macs_stereo) = (count(Branch::Full4D)?, count(Branch::Stereo)?);
    let r = flops_decomposed(shape, 0)?;
    Ok(BenchRow {
        shape,
        macs_full4d,
        macs_stereo,
        formula_full4d: r.analytic_full4d,
        formula_stereo: r.analytic_3d + r.analytic_row_grouped,
        ms_full4d,
        ms_stereo,
    })
}

/// Runs `shapes` in sorted order.
pub fn bench_sweep(shapes: &[(u64, u64, u64)], seed: u64, repeats: usize) -> Result<Vec<BenchRow>> {
    let mut shapes = shapes.to_vec();
    shapes.sort_unstable();
    shapes.dedup();
    shapes
        .iter()
        .enumerate()
        .map(|(i, &(f, h, w))| bench_shape(ShapeSpec::new(1, f, h, w, BENCH_D)?, seed.wrapping_add(i as u64), repeats))
        .collect()
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
