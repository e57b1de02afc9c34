//! Rectified flow between Gaussian noise (`t = 0`) and data (`t = 1`).
//!
//! `z_t = (1 - t)·z0 + t·z1`, target velocity `z1 - z0`. The first
//! `cond_frames` frames of every input are replaced by clean data and are
//! excluded from the loss; sampling keeps them fixed.

use crate::attention::TokenGrid;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Array, Scalar};

/// Anything that predicts a velocity for a noisy grid.
pub trait VelocityField<T: Scalar> {
    fn velocity(&self, z_t: &TokenGrid<T>, t: f64, cond_frames: usize) -> Result<Array<T>>;
}

/// Predicts zero everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocity;

impl<T: Scalar> VelocityField<T> for ZeroVelocity {
    fn velocity(&self, z_t: &TokenGrid<T>, _t: f64, _cond_frames: usize) -> Result<Array<T>> {
        Ok(Array::zeros(z_t.values().shape()))
    }
}

/// Returns a fixed velocity regardless of input, e.g. the exact `z1 - z0`
/// of one noise draw.
#[derive(Debug, Clone)]
pub struct ConstantVelocity<T>(pub Array<T>);

impl<T: Scalar> VelocityField<T> for ConstantVelocity<T> {
    fn velocity(&self, z_t: &TokenGrid<T>, _t: f64, _cond_frames: usize) -> Result<Array<T>> {
        if z_t.values().shape() != self.0.shape() {
            return Err(Error::invalid("constant velocity: shape mismatch"));
        }
        Ok(self.0.clone())
    }
}

/// One point on the straight path from `z0` to `z1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState<T> {
    pub z0: Array<T>,
    pub z1: Array<T>,
    pub t: f64,
    pub z_t: Array<T>,
}

impl<T: Scalar> FlowState<T> {
    pub fn new(z0: Array<T>, z1: Array<T>, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("flow time {t} outside [0, 1]")));
        }
        let tt = T::of_f64(t);
        let z_t = z0.zip_map(&z1, "flow interpolation", |a, b| (T::one() - tt) * a + tt * b)?;
        Ok(FlowState { z0, z1, t, z_t })
    }

    pub fn target(&self) -> Result<Array<T>> {
        self.z1.sub(&self.z0)
    }
}

fn check_cond(dims_f: usize, cond_frames: usize) -> Result<()> {
    if cond_frames >= dims_f {
        return Err(Error::invalid(format!(
            "{cond_frames} conditioning frames leave nothing to generate in {dims_f} frames"
        )));
    }
    Ok(())
}

/// Copies frames `..cond_frames` of `src` into `dst` (both `(2, f, h, w, c)`).
pub fn clamp_frames<T: Scalar>(dst: &mut Array<T>, src: &Array<T>, cond_frames: usize) -> Result<()> {
    if dst.shape() != src.shape() || dst.ndim() != 5 {
        return Err(Error::invalid("clamp_frames: shapes differ"));
    }
    let s = dst.shape().to_vec();
    let frame = s[2] * s[3] * s[4];
    for view in 0..2 {
        let base = view * s[1] * frame;
        let range = base..base + cond_frames * frame;
        dst.data_mut()[range.clone()].copy_from_slice(&src.data()[range]);
    }
    Ok(())
}

/// Model input for one training example: `z_t` with clean conditioning
/// frames, carrying the cameras of `clean`.
pub fn noisy_grid<T: Scalar>(clean: &TokenGrid<T>, state: &FlowState<T>, cond_frames: usize) -> Result<TokenGrid<T>> {
    let mut z = state.z_t.clone();
    clamp_frames(&mut z, clean.values(), cond_frames)?;
    let mut g = TokenGrid::new(z, clean.cameras().to_vec())?;
    g = g.with_frame_offset(clean.frame_offset());
    Ok(g)
}

/// Mean squared error over generated (non-conditioning) frames and the
/// gradient of that mean with respect to the prediction.
pub fn masked_mse<T: Scalar>(pred: &Array<T>, target: &Array<T>, cond_frames: usize) -> Result<(f64, Array<T>)> {
    if pred.shape() != target.shape() || pred.ndim() != 5 {
        return Err(Error::invalid("masked_mse: shapes differ"));
    }
    let s = pred.shape();
    check_cond(s[1], cond_frames)?;
    let frame = s[2] * s[3] * s[4];
    let count = 2 * (s[1] - cond_frames) * frame;
    let mut grad = Array::zeros(s);
    let mut total = 0.0;
    let scale = T::of_f64(2.0 / count as f64);
    for view in 0..2 {
        let start = (view * s[1] + cond_frames) * frame;
        let end = (view + 1) * s[1] * frame;
        for i in start..end {
            let e = pred.data()[i] - target.data()[i];
            total += e.as_f64() * e.as_f64();
            grad.data_mut()[i] = e * scale;
        }
    }
    Ok((total / count as f64, grad))
}

/// Flow loss of `field` at one `(z0, t)` draw.
pub fn flow_loss<T: Scalar, V: VelocityField<T>>(
    field: &V,
    clean: &TokenGrid<T>,
    state: &FlowState<T>,
    cond_frames: usize,
) -> Result<f64> {
    let input = noisy_grid(clean, state, cond_frames)?;
    let v = field.velocity(&input, state.t, cond_frames)?;
    Ok(masked_mse(&v, &state.target()?, cond_frames)?.0)
}

/// Draws `z0 ~ N(0, 1)` and `t ~ U[0, 1)` for `clean`.
pub fn draw_state<T: Scalar>(rng: &mut Rng, clean: &TokenGrid<T>) -> Result<FlowState<T>> {
    let z0 = rng.normal_array(clean.values().shape(), 1.0);
    let t = rng.uniform();
    FlowState::new(z0, clean.values().clone(), t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub steps: usize,
    /// Standard deviation of the starting noise.
    pub noise_std: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            steps: 20,
            noise_std: 1.0,
        }
    }
}

/// Euler integration from noise at `t = 0` to `t = 1`. The first
/// `cond_frames` frames of `condition` stay fixed; its later frames are
/// ignored except for their cameras.
pub fn sample<T: Scalar, V: VelocityField<T>>(
    field: &V,
    condition: &TokenGrid<T>,
    cond_frames: usize,
    opts: SampleOptions,
    rng: &mut Rng,
) -> Result<TokenGrid<T>> {
    if opts.steps == 0 {
        return Err(Error::invalid("sampling needs at least one step"));
    }
    check_cond(condition.dims().f, cond_frames)?;
    let shape = condition.values().shape().to_vec();
    let mut z: Array<T> = rng.normal_array(&shape, opts.noise_std);
    clamp_frames(&mut z, condition.values(), cond_frames)?;
    let dt = 1.0 / opts.steps as f64;
    for i in 0..opts.steps {
        let t = i as f64 * dt;
        let grid = TokenGrid::new(z.clone(), condition.cameras().to_vec())?.with_frame_offset(condition.frame_offset());
        let v = field.velocity(&grid, t, cond_frames)?;
        z.axpy(T::of_f64(dt), &v)?;
        clamp_frames(&mut z, condition.values(), cond_frames)?;
        z.ensure_finite("sample")?;
    }
    TokenGrid::new(z, condition.cameras().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rng: &mut Rng, f: usize) -> TokenGrid<f64> {
        TokenGrid::without_cameras(rng.normal_array(&[2, f, 3, 4, 1], 1.0)).unwrap()
    }

    #[test]
    fn interpolation_endpoints() {
        let mut rng = Rng::new(1);
        let z0: Array<f64> = rng.normal_array(&[2, 2, 1, 1, 1], 1.0);
        let z1: Array<f64> = rng.normal_array(&[2, 2, 1, 1, 1], 1.0);
        assert_eq!(FlowState::new(z0.clone(), z1.clone(), 0.0).unwrap().z_t, z0);
        assert_eq!(FlowState::new(z0.clone(), z1.clone(), 1.0).unwrap().z_t, z1);
        let mid = FlowState::new(z0.clone(), z1.clone(), 0.5).unwrap().z_t;
        let avg = z0.add(&z1).unwrap().scale(0.5).unwrap();
        assert!(mid.max_abs_diff(&avg).unwrap() < 1e-15);
        assert!(FlowState::new(z0.clone(), z1, 1.5).is_err());
    }

    #[test]
    fn exact_velocity_one_step_recovers_data() {
        let mut rng = Rng::new(2);
        let clean = grid(&mut rng, 3);
        let mut noise_rng = Rng::new(9);
        let z0: Array<f64> = noise_rng.clone().normal_array(clean.values().shape(), 1.0);
        let field = ConstantVelocity(clean.values().sub(&z0).unwrap());
        let out = sample(
            &field,
            &clean,
            1,
            SampleOptions {
                steps: 1,
                noise_std: 1.0,
            },
            &mut noise_rng,
        )
        .unwrap();
        assert!(out.values().max_abs_diff(clean.values()).unwrap() < 1e-12);
    }

    #[test]
    fn zero_noise_zero_velocity_is_fixed_point() {
        let mut rng = Rng::new(3);
        let clean = grid(&mut rng, 3);
        let out = sample(
            &ZeroVelocity,
            &clean,
            1,
            SampleOptions {
                steps: 7,
                noise_std: 0.0,
            },
            &mut rng,
        )
        .unwrap();
        let mut expected = Array::zeros(clean.values().shape());
        clamp_frames(&mut expected, clean.values(), 1).unwrap();
        assert_eq!(out.values(), &expected);
    }

    #[test]
    fn zero_model_loss_is_two() {
        // E|z1 - z0|² = Var z1 + Var z0 = 2 for unit-variance data
        let mut rng = Rng::new(4);
        let mut total = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let clean: TokenGrid<f64> = TokenGrid::without_cameras(rng.normal_array(&[2, 2, 1, 1, 1], 1.0)).unwrap();
            let st = draw_state(&mut rng, &clean).unwrap();
            total += flow_loss(&ZeroVelocity, &clean, &st, 1).unwrap();
        }
        let mean = total / n as f64;
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn conditioning_frames_are_excluded() {
        let mut rng = Rng::new(5);
        let p: Array<f64> = rng.normal_array(&[2, 3, 1, 2, 1], 1.0);
        let mut q = p.clone();
        // disagree only on frame 0
        q.set(&[0, 0, 0, 0, 0], 100.0);
        q.set(&[1, 0, 0, 1, 0], -100.0);
        let (loss, grad) = masked_mse(&p, &q, 1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
        assert!(masked_mse(&p, &q, 3).is_err());
    }
}
