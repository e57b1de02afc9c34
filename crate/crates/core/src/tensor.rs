//! Dense row-major arrays and the handful of kernels the rest of the crate
//! is built on.
//!
//! Every operation that can produce a value checks its output for NaN/Inf and
//! reports [`Error::NonFinite`] instead of letting it propagate. Matrix
//! products are delegated to `matrixmultiply` and may report their
//! multiply-add cost to a caller-owned [`MacCounter`].

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::MacCounter;

/// Element precision of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element type (`f32` or `f64`).
pub trait Scalar:
    Float
    + Debug
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: DType;

    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_usize(x: usize) -> Self {
        Self::of_f64(x as f64)
    }
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides must address only elements inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// How an operand of [`gemm`] is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c (m×n) = alpha · op(a) · op(b) + beta · c` on row-major slices.
///
/// `a` is stored as `m×k` (`Op::N`) or `k×m` (`Op::T`); `b` as `k×n` or
/// `n×k`. Panics if a slice is too short for the requested extents.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    op_a: Op,
    op_b: Op,
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: extents were checked against the slice lengths above and the
    // strides address a dense m×k / k×n / m×n block.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Array {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Array {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Array {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a 2-D array from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("from_rows: ragged rows"));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&x| T::of_f64(x)))
            .collect();
        Array::from_vec(&[m, n], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut a = Array::zeros(&[n, n]);
        for i in 0..n {
            a.data[i * n + i] = T::one();
        }
        a
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a 2-D array.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                assert!(i < n, "index {i} out of bounds for extent {n}");
                acc * n + i
            })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = *self.shape.last().expect("non-scalar");
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = *self.shape.last().expect("non-scalar");
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let out = Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        };
        out.ensure_finite(op)?;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Result<Self> {
        let out = self.map(|v| v * s);
        out.ensure_finite("scale")?;
        Ok(out)
    }

    /// `self += s * other`, in place.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        self.ensure_finite("axpy")
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn transpose2(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose2")?;
        let mut out = Array::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    /// Largest absolute elementwise difference, in 64-bit.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Matrix product `a (m×k) · b (k×n)`.
pub fn matmul<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    matmul_counted(a, b, None)
}

/// Matrix product that reports `2·m·n·k` to `counter` when one is attached.
pub fn matmul_counted<T: Scalar>(
    a: &Array<T>,
    b: &Array<T>,
    counter: Option<&MacCounter>,
) -> Result<Array<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = Array::zeros(&[m, n]);
    gemm(Op::N, Op::N, m, k, n, T::one(), &a.data, &b.data, T::zero(), &mut out.data);
    if let Some(c) = counter {
        c.record_matmul(m, k, n);
    }
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// `a (m×k) · bᵀ` where `b` is stored `n×k`.
pub fn matmul_nt<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let (m, k) = a.dims2("matmul_nt")?;
    let (n, k2) = b.dims2("matmul_nt")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = Array::zeros(&[m, n]);
    gemm(Op::N, Op::T, m, k, n, T::one(), &a.data, &b.data, T::zero(), &mut out.data);
    out.ensure_finite("matmul_nt")?;
    Ok(out)
}

/// `aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn matmul_tn<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let (k, m) = a.dims2("matmul_tn")?;
    let (k2, n) = b.dims2("matmul_tn")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = Array::zeros(&[m, n]);
    gemm(Op::T, Op::N, m, k, n, T::one(), &a.data, &b.data, T::zero(), &mut out.data);
    out.ensure_finite("matmul_tn")?;
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(a: &Array<T>) -> Result<Array<T>> {
    let (m, n) = a.dims2("softmax_rows")?;
    a.ensure_finite("softmax_rows")?;
    let mut out = a.clone();
    for i in 0..m {
        softmax_in_place(&mut out.data[i * n..(i + 1) * n]);
    }
    out.ensure_finite("softmax_rows")?;
    Ok(out)
}

/// Softmax of one row in place. Entries equal to `-inf` receive zero
/// weight; at least one entry must be finite.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = if *v == T::neg_infinity() {
            T::zero()
        } else {
            (*v - max).exp()
        };
        total += *v;
    }
    let inv = T::one() / total;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Array<T> {
        let (m, k) = a.dims2("t").unwrap();
        let (_, n) = b.dims2("t").unwrap();
        let mut out = Array::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    acc += a.get(&[i, p]).as_f64() * b.get(&[p, j]).as_f64();
                }
                out.set(&[i, j], T::of_f64(acc));
            }
        }
        out
    }

    #[test]
    fn identity_product() {
        let i3 = Array::<f64>::eye(3);
        assert_eq!(matmul(&i3, &i3).unwrap(), i3);
    }

    #[test]
    fn hand_product() {
        let a = Array::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Array::<f64>::from_rows(&[&[0.0], &[1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn random_matches_triple_loop() {
        let mut rng = Rng::new(3);
        let a: Array<f32> = rng.normal_array(&[5, 7], 1.0);
        let b: Array<f32> = rng.normal_array(&[7, 3], 1.0);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0));
        }
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = Rng::new(4);
        let a: Array<f64> = rng.normal_array(&[4, 6], 1.0);
        let b: Array<f64> = rng.normal_array(&[5, 6], 1.0);
        let nt = matmul_nt(&a, &b).unwrap();
        let direct = matmul(&a, &b.transpose2().unwrap()).unwrap();
        assert!(nt.max_abs_diff(&direct).unwrap() < 1e-12);
        let tn = matmul_tn(&a.transpose2().unwrap(), &b.transpose2().unwrap()).unwrap();
        assert!(tn.max_abs_diff(&direct).unwrap() < 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Array::<f64>::zeros(&[2, 3]);
        let b = Array::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_reports_macs() {
        let counter = MacCounter::new();
        let a = Array::<f64>::zeros(&[3, 4]);
        let b = Array::<f64>::zeros(&[4, 5]);
        matmul_counted(&a, &b, Some(&counter)).unwrap();
        assert_eq!(counter.total(), 2 * 3 * 4 * 5);
    }

    #[test]
    fn softmax_examples() {
        let a = Array::<f64>::from_rows(&[&[0.0, 0.0]]).unwrap();
        assert_eq!(softmax_rows(&a).unwrap().data(), &[0.5, 0.5]);
        let big = Array::<f32>::from_rows(&[&[1000.0, 1000.0, 1000.0]]).unwrap();
        let s = softmax_rows(&big).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let mut rng = Rng::new(11);
        let r: Array<f64> = rng.normal_array(&[4, 6], 3.0);
        let s = softmax_rows(&r).unwrap();
        for i in 0..4 {
            let total: f64 = s.row(i).iter().sum();
            assert!((total - 1.0).abs() <= 1e-6);
            assert!(s.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let a = Array::<f64>::from_vec(&[1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(softmax_rows(&a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn overflow_is_surfaced() {
        let a = Array::<f32>::full(&[1, 1], 1e30);
        assert!(matches!(matmul(&a, &a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Array::<f64>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
                let mut rng = crate::rng::Rng::new(seed);
                let a: Array<f64> = rng.normal_array(&[m, k], 1.0);
                let b: Array<f64> = rng.normal_array(&[k, n], 1.0);
                let c: Array<f64> = rng.normal_array(&[n, p], 1.0);
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                for (x, y) in left.data().iter().zip(right.data()) {
                    prop_assert!((x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1.0));
                }
            }

            #[test]
            fn softmax_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
                let mut rng = crate::rng::Rng::new(seed);
                let a: Array<f64> = rng.normal_array(&[3, 5], 2.0);
                let mut shifted = a.clone();
                for i in 0..3 {
                    let s = shift * (i as f64 + 1.0);
                    for v in shifted.row_mut(i) { *v += s; }
                }
                let d = softmax_rows(&a).unwrap().max_abs_diff(&softmax_rows(&shifted).unwrap()).unwrap();
                prop_assert!(d <= 1e-6);
            }
        }
    }
}
