//! Stereo-decomposed attention equals intra-view plus row attention and
//! matches a dense masked reference.
//!
//! cargo run --example stereo_attention

use stereoworld::attention::{
    full_4d_attention, intra_view_attention, masked_dense_oracle, masks, row_attention, stereo_attention,
    AttentionParams, TokenGrid,
};
use stereoworld::camera::{Extrinsics, Intrinsics, NormalizationPolicy, StereoRig};
use stereoworld::rng::Rng;
use stereoworld::rope::RopeConfig;

fn main() -> stereoworld::Result<()> {
    let mut rng = Rng::new(0);
    let (f, h, w, c) = (3, 4, 6, 8);
    let cfg = RopeConfig::new(12, 4)?;
    let rig = StereoRig::rectified(Intrinsics::centered(6.0, w as u32, h as u32)?, Extrinsics::identity(), 0.5)?;
    let grid = TokenGrid::<f64>::with_rig(rng.normal_array(&[2, f, h, w, c], 1.0), &rig, NormalizationPolicy::default())?;
    let params = AttentionParams::random(&mut rng, c, c, 2, &cfg);

    let intra = intra_view_attention(&grid, &params, &cfg)?;
    let row = row_attention(&grid, &params, &cfg)?;
    let stereo = stereo_attention(&grid, &params, &cfg)?;
    let full = full_4d_attention(&grid, &params, &cfg)?;

    let sum = intra.values().add(row.values())?;
    println!("tokens: {}", grid.dims().tokens());
    println!("|stereo - (intra + row)|       = {:.2e}", stereo.values().max_abs_diff(&sum)?);
    let o = masked_dense_oracle(&grid, &params, &cfg, masks::same_view)?;
    println!("|intra - same-view oracle|     = {:.2e}", intra.values().max_abs_diff(o.values())?);
    let o = masked_dense_oracle(&grid, &params, &cfg, masks::same_row)?;
    println!("|row - same-row oracle|        = {:.2e}", row.values().max_abs_diff(o.values())?);
    let o = masked_dense_oracle(&grid, &params, &cfg, masks::all)?;
    println!("|full 4D - unmasked oracle|    = {:.2e}", full.values().max_abs_diff(o.values())?);
    println!("|stereo - full 4D| (different) = {:.2e}", stereo.values().max_abs_diff(full.values())?);
    Ok(())
}
