//! Attention cost: closed-form multiply-add totals and an exact counter fed by
//! the score (`Q·Kᵀ`) and value (`A·V`) products.
//!
//! Convention: a product of an `m×k` and a `k×n` matrix costs `2·m·n·k`, so a
//! full attention head over `L` tokens of width `d` costs `4·L²·d`.
//! Projections are not counted.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::attention::{attend, AttentionParams, Branch, TokenGrid};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::rope::RopeConfig;
use crate::tensor::Array;

/// Caller-owned multiply-add accumulator.
#[derive(Debug, Default)]
pub struct MacCounter {
    total: Cell<u128>,
}

impl MacCounter {
    pub fn new() -> Self {
        MacCounter::default()
    }

    pub fn record_matmul(&self, m: usize, k: usize, n: usize) {
        self.total.set(self.total.get() + 2 * m as u128 * k as u128 * n as u128);
    }

    pub fn total(&self) -> u128 {
        self.total.get()
    }
}

/// Reads a counter; fails when no counter was attached to the run.
pub fn empirical_count(counter: Option<&MacCounter>) -> Result<u128> {
    counter.map(MacCounter::total).ok_or(Error::InstrumentationDisabled)
}

/// Runs `f` with a fresh counter and returns what it recorded.
pub fn count_macs<F>(f: F) -> Result<u128>
where
    F: FnOnce(&MacCounter) -> Result<()>,
{
    let counter = MacCounter::new();
    f(&counter)?;
    empirical_count(Some(&counter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub b: u64,
    pub f: u64,
    pub h: u64,
    pub w: u64,
    pub d: u64,
}

impl ShapeSpec {
    pub fn new(b: u64, f: u64, h: u64, w: u64, d: u64) -> Result<Self> {
        let s = ShapeSpec { b, f, h, w, d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.b, self.f, self.h, self.w, self.d].contains(&0) {
            return Err(Error::invalid(format!("shape extents must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Tokens of the joint stereo sequence, `2·f·h·w`.
    pub fn joint_tokens(&self) -> u64 {
        2 * self.f * self.h * self.w
    }
}

/// `4·L²·d`.
pub fn flops_full_head(l: u64, d: u64) -> Result<u128> {
    if l == 0 || d == 0 {
        return Err(Error::invalid("flops_full_head: L and d must be positive"));
    }
    Ok(4 * (l as u128) * (l as u128) * d as u128)
}

/// Counted totals for each variant at one shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCounts {
    pub full4d: u128,
    pub attn3d: u128,
    pub row: u128,
    pub stereo_total: u128,
    pub ratio: f64,
}

/// Totals with queries/keys widened to `d + d_c` (values stay at `d`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraAdjusted {
    pub d_c: u64,
    pub full4d: u128,
    pub attn3d: u128,
    pub row: u128,
    pub stereo_total: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub shape: ShapeSpec,
    /// `16·b·f²h²w²·d`.
    pub analytic_full4d: u128,
    /// `8·b·f²h²w²·d`.
    pub analytic_3d: u128,
    /// `4·b·f·h·w²·d`, the row term in its published form.
    pub analytic_row: u128,
    pub analytic_stereo_total: u128,
    /// `analytic_full4d / analytic_stereo_total`.
    pub ratio: f64,
    /// `16·b·f·h·w²·d`: exact cost of `f·h` row groups of `2w` tokens each.
    pub analytic_row_grouped: u128,
    pub camera_adjusted: CameraAdjusted,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalCounts>,
}

/// Analytic totals for `shape`; `d_c` only affects the adjusted column.
pub fn flops_decomposed(shape: ShapeSpec, d_c: u64) -> Result<FlopsReport> {
    shape.validate()?;
    let (b, f, h, w, d) = (
        shape.b as u128,
        shape.f as u128,
        shape.h as u128,
        shape.w as u128,
        shape.d as u128,
    );
    let full = 16 * b * f * f * h * h * w * w * d;
    let attn3d = 8 * b * f * f * h * h * w * w * d;
    let row = 4 * b * f * h * w * w * d;
    let stereo = attn3d + row;
    let width = 2 * d + d_c as u128;
    let adj_full = 8 * b * f * f * h * h * w * w * width;
    let adj_3d = 4 * b * f * f * h * h * w * w * width;
    let adj_row = 8 * b * f * h * w * w * width;
    Ok(FlopsReport {
        shape,
        analytic_full4d: full,
        analytic_3d: attn3d,
        analytic_row: row,
        analytic_stereo_total: stereo,
        ratio: full as f64 / stereo as f64,
        analytic_row_grouped: 16 * b * f * h * w * w * d,
        camera_adjusted: CameraAdjusted {
            d_c,
            full4d: adj_full,
            attn3d: adj_3d,
            row: adj_row,
            stereo_total: adj_3d + adj_row,
        },
        empirical: None,
    })
}

/// Counts the multiply-adds of each attention variant on a random grid of
/// `shape` (one head, no camera dims) by running it `b` times.
pub fn measure(shape: ShapeSpec, seed: u64) -> Result<EmpiricalCounts> {
    shape.validate()?;
    let d = shape.d as usize;
    if d % 2 != 0 {
        return Err(Error::invalid("measure: d must be even"));
    }
    let cfg = RopeConfig::new(d, 0)?;
    let mut rng = Rng::new(seed);
    let c = 4;
    let params = AttentionParams::<f32>::random(&mut rng, c, c, 1, &cfg);
    let values: Array<f32> = rng.normal_array(&[2, shape.f as usize, shape.h as usize, shape.w as usize, c], 1.0);
    let grid = TokenGrid::without_cameras(values)?;
    let run = |branch: Branch| -> Result<u128> {
        count_macs(|counter| {
            for _ in 0..shape.b {
                attend(&grid, &params, &cfg, branch, Some(counter))?;
            }
            Ok(())
        })
    };
    let full4d = run(Branch::Full4D)?;
    let attn3d = run(Branch::IntraView)?;
    let row = run(Branch::Row)?;
    let stereo_total = run(Branch::Stereo)?;
    Ok(EmpiricalCounts {
        full4d,
        attn3d,
        row,
        stereo_total,
        ratio: full4d as f64 / stereo_total as f64,
    })
}

pub const CSV_HEADER: &str = "b,f,h,w,d,full4d,attn3d,row,stereo_total,ratio";

impl FlopsReport {
    pub fn csv_row(&self) -> String {
        let s = self.shape;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            s.b,
            s.f,
            s.h,
            s.w,
            s.d,
            self.analytic_full4d,
            self.analytic_3d,
            self.analytic_row,
            self.analytic_stereo_total,
            self.ratio
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_head_examples() {
        assert_eq!(flops_full_head(1, 1).unwrap(), 4);
        assert_eq!(flops_full_head(7800, 128).unwrap(), 31_150_080_000);
        assert_eq!(flops_full_head(200, 3).unwrap() * 4, flops_full_head(400, 3).unwrap());
        assert!(flops_full_head(0, 1).is_err());
    }

    #[test]
    fn published_shape() {
        let r = flops_decomposed(ShapeSpec::new(1, 13, 15, 20, 128).unwrap(), 0).unwrap();
        assert_eq!(r.analytic_full4d, 31_150_080_000);
        assert_eq!(r.analytic_3d, 15_575_040_000);
        assert_eq!(r.analytic_row, 39_936_000);
        assert_eq!(r.analytic_stereo_total, 15_614_976_000);
        assert!((1.99..=2.00).contains(&r.ratio));
        assert!((r.ratio - 1.995).abs() < 1e-3);
        assert_eq!(r.analytic_full4d, flops_full_head(7800, 128).unwrap());
    }

    #[test]
    fn unit_shape() {
        let r = flops_decomposed(ShapeSpec::new(1, 1, 1, 1, 1).unwrap(), 0).unwrap();
        assert_eq!((r.analytic_full4d, r.analytic_3d, r.analytic_row), (16, 8, 4));
        assert!(ShapeSpec::new(1, 0, 1, 1, 1).is_err());
    }

    #[test]
    fn unit_shape_counted() {
        // two tokens, d = 4: Q·Kᵀ is 2×4·4×2 (32) and A·V is 2×2·2×4 (32)
        let e = measure(ShapeSpec::new(1, 1, 1, 1, 4).unwrap(), 0).unwrap();
        assert_eq!(e.full4d, 64);
    }

    #[test]
    fn counter_requires_attachment() {
        assert!(matches!(empirical_count(None), Err(Error::InstrumentationDisabled)));
    }

    #[test]
    fn counted_matches_grouped_formulas() {
        for (f, h, w, d) in [(1, 1, 1, 2), (2, 3, 4, 4), (3, 2, 5, 8)] {
            let shape = ShapeSpec::new(2, f, h, w, d).unwrap();
            let r = flops_decomposed(shape, 0).unwrap();
            let e = measure(shape, 1).unwrap();
            assert_eq!(e.full4d, r.analytic_full4d);
            assert_eq!(e.attn3d, r.analytic_3d);
            assert_eq!(e.row, r.analytic_row_grouped);
            assert_eq!(e.stereo_total, e.attn3d + e.row);
            assert_eq!(measure(shape, 99).unwrap(), e);
        }
    }

    #[test]
    fn camera_adjusted_reduces_at_zero() {
        let r = flops_decomposed(ShapeSpec::new(1, 2, 3, 4, 8).unwrap(), 0).unwrap();
        assert_eq!(r.camera_adjusted.full4d, r.analytic_full4d);
        assert_eq!(r.camera_adjusted.attn3d, r.analytic_3d);
        assert_eq!(r.camera_adjusted.row, r.analytic_row_grouped);
    }

    proptest! {
        #[test]
        fn closed_form_identities(b in 1u64..4, f in 1u64..30, h in 1u64..40, w in 1u64..40, d in 1u64..256) {
            let r = flops_decomposed(ShapeSpec::new(b, f, h, w, d).unwrap(), 0).unwrap();
            prop_assert_eq!(r.analytic_3d * 2, r.analytic_full4d);
            prop_assert_eq!(r.analytic_row * 4 * f as u128 * h as u128, r.analytic_full4d);
            prop_assert_eq!(r.analytic_stereo_total, r.analytic_3d + r.analytic_row);
        }
    }
}
