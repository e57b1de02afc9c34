//! Central finite-difference gradient probe.

use crate::error::{Error, Result};
use crate::tensor::Array;

/// Gradient of a scalar function by central differences,
/// `(f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)` per element.
pub fn fd_gradient<F>(mut f: F, x: &Array<f64>, eps: f64) -> Result<Array<f64>>
where
    F: FnMut(&Array<f64>) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("fd_gradient: eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Array::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { op: "fd_gradient" });
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax_rows;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Array::from_vec(&[4], vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let g = fd_gradient(|a| Ok(a.sum()), &x, 1e-5).unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn half_norm_squared() {
        let x = Array::from_vec(&[2], vec![3.0, -2.0]).unwrap();
        let g = fd_gradient(|a| Ok(0.5 * a.dot(a)?), &x, 1e-4).unwrap();
        assert!((g.data()[0] - 3.0).abs() < 1e-8);
        assert!((g.data()[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn softmax_first_matches_jacobian_row() {
        // d s_0 / d x_j = s_0 (δ_0j - s_j); at x = 0 that is [0.25, -0.25].
        let x = Array::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let g = fd_gradient(|a| Ok(softmax_rows(a)?.data()[0]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 0.25).abs() < 1e-9);
        assert!((g.data()[1] + 0.25).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_eps_and_nan() {
        let x = Array::from_vec(&[1], vec![1.0]).unwrap();
        assert!(fd_gradient(|a| Ok(a.sum()), &x, 0.0).is_err());
        assert!(matches!(
            fd_gradient(|_| Ok(f64::NAN), &x, 1e-3),
            Err(Error::NonFinite { .. })
        ));
    }
}
