//! Dense row-major tensors over `f32` or `f64`.
//!
//! Every allocation is counted against a thread-local live/peak byte gauge so
//! benchmarks can report peak live tensor memory deterministically.

use std::cell::Cell;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{shape_err, Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = a @ b` with explicit operand strides; `c` is dense row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
    );

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        (rsa, csa): (isize, isize),
        b: &[f32],
        (rsb, csb): (isize, isize),
        c: &mut [f32],
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: the slices cover every index reachable through the given
        // strides (checked above for the dense row-major/transposed layouts
        // produced by `Tensor::matmul`).
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        (rsa, csa): (isize, isize),
        b: &[f64],
        (rsb, csb): (isize, isize),
        c: &mut [f64],
    ) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }
}

thread_local! {
    static LIVE_BYTES: Cell<usize> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<usize> = const { Cell::new(0) };
}

/// Thread-local accounting of bytes held by live tensors.
pub mod memory {
    use super::{LIVE_BYTES, PEAK_BYTES};

    pub fn live_bytes() -> usize {
        LIVE_BYTES.with(|c| c.get())
    }

    pub fn peak_bytes() -> usize {
        PEAK_BYTES.with(|c| c.get())
    }

    /// Reset the peak to the current live size.
    pub fn reset_peak() {
        let live = live_bytes();
        PEAK_BYTES.with(|c| c.set(live));
    }

    pub(super) fn alloc(bytes: usize) {
        let live = LIVE_BYTES.with(|c| {
            let v = c.get() + bytes;
            c.set(v);
            v
        });
        PEAK_BYTES.with(|c| {
            if live > c.get() {
                c.set(live)
            }
        });
    }

    pub(super) fn free(bytes: usize) {
        LIVE_BYTES.with(|c| c.set(c.get().saturating_sub(bytes)));
    }
}

pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Drop for Tensor<T> {
    fn drop(&mut self) {
        memory::free(self.data.len() * std::mem::size_of::<T>());
    }
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self::raw(self.shape.clone(), self.data.clone())
    }
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Scalar> Tensor<T> {
    fn raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        memory::alloc(data.len() * std::mem::size_of::<T>());
        Self { shape, data }
    }

    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err("new", shape, &[data.len()]));
        }
        Ok(Self::raw(shape.to_vec(), data))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::from_f64_lossy(x)).collect())
    }

    pub fn vector(data: Vec<T>) -> Self {
        let n = data.len();
        Self::raw(vec![n], data)
    }

    pub fn scalar(x: T) -> Self {
        Self::raw(vec![], vec![x])
    }

    pub fn full(shape: &[usize], x: T) -> Self {
        Self::raw(shape.to_vec(), vec![x; shape.iter().product()])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self::raw(vec![n, n], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row length for a 2-D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::raw(
            self.shape.clone(),
            self.data.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::raw(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(op, &self.shape, &other.shape));
        }
        Ok(Self::raw(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
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

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(shape_err("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(shape_err("reshape", &self.shape, shape));
        }
        Ok(Self::raw(shape.to_vec(), self.data.clone()))
    }

    /// `op(a) @ op(b)` where `op` optionally transposes a 2-D operand.
    pub fn matmul(&self, other: &Self, ta: bool, tb: bool) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return Err(shape_err("matmul", &self.shape, &other.shape));
        }
        let (ar, ac) = (self.shape[0], self.shape[1]);
        let (br, bc) = (other.shape[0], other.shape[1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err("matmul", &self.shape, &other.shape));
        }
        let sa = if ta { (1, ac as isize) } else { (ac as isize, 1) };
        let sb = if tb { (1, bc as isize) } else { (bc as isize, 1) };
        let mut out = vec![T::zero(); m * n];
        if m * n > 0 && k > 0 {
            T::gemm(m, k, n, &self.data, sa, &other.data, sb, &mut out);
        }
        Ok(Self::raw(vec![m, n], out))
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// `[m, n] -> [n]`: sum over the leading (batch) dimension.
    pub fn sum_rows(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(shape_err("sum_rows", &self.shape, &[]));
        }
        let n = self.shape[1];
        let mut out = vec![T::zero(); n];
        for row in self.data.chunks_exact(n.max(1)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        Ok(Self::raw(vec![n], out))
    }

    /// `[m, n] -> [m]`: per-row sums.
    pub fn sum_cols(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(shape_err("sum_cols", &self.shape, &[]));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let out = if n == 0 {
            vec![T::zero(); m]
        } else {
            self.data.chunks_exact(n).map(|r| r.iter().copied().sum()).collect()
        };
        Ok(Self::raw(vec![m], out))
    }

    /// `[n] -> [m, n]`: repeat a row `m` times.
    pub fn broadcast_rows(&self, m: usize) -> Result<Self> {
        if self.ndim() != 1 {
            return Err(shape_err("broadcast_rows", &self.shape, &[m]));
        }
        let n = self.shape[0];
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&self.data);
        }
        Ok(Self::raw(vec![m, n], out))
    }

    /// `[m] -> [m, n]`: repeat each element across a row.
    pub fn broadcast_cols(&self, n: usize) -> Result<Self> {
        if self.ndim() != 1 {
            return Err(shape_err("broadcast_cols", &self.shape, &[n]));
        }
        let m = self.shape[0];
        let mut out = Vec::with_capacity(m * n);
        for &x in &self.data {
            out.extend(std::iter::repeat_n(x, n));
        }
        Ok(Self::raw(vec![m, n], out))
    }

    /// Scalar (any one-element tensor) expanded to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Self> {
        if self.numel() != 1 {
            return Err(shape_err("expand", &self.shape, shape));
        }
        Ok(Self::full(shape, self.data[0]))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if self.ndim() == 0 || start + len > self.rows() {
            return Err(shape_err("slice_rows", &self.shape, &[start, len]));
        }
        let c = self.cols();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self::raw(shape, self.data[start * c..(start + len) * c].to_vec()))
    }

    /// Embed rows into a zero tensor with `total` rows, starting at `start`.
    pub fn pad_rows(&self, start: usize, total: usize) -> Result<Self> {
        if self.ndim() == 0 || start + self.rows() > total {
            return Err(shape_err("pad_rows", &self.shape, &[start, total]));
        }
        let c = self.cols();
        let mut shape = self.shape.clone();
        shape[0] = total;
        let mut out = vec![T::zero(); total * c];
        out[start * c..start * c + self.numel()].copy_from_slice(&self.data);
        Ok(Self::raw(shape, out))
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.ndim() == 0 || &p.shape[1..] != tail {
                return Err(shape_err("concat_rows", &first.shape, &p.shape));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self::raw(shape, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_transposes() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 3], &[1., 0., 1., 0., 1., 0.]).unwrap();
        let abt = a.matmul(&b, false, true).unwrap();
        assert_eq!(abt.shape(), &[2, 2]);
        assert_eq!(abt.data(), &[4., 2., 10., 5.]);
        let atb = a.matmul(&b, true, false).unwrap();
        assert_eq!(atb.shape(), &[3, 3]);
        assert_eq!(atb.data(), &[1., 4., 1., 2., 5., 2., 3., 6., 3.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = a.matmul(&b, false, false).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn row_reductions_and_broadcasts() {
        let a = Tensor::<f64>::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(a.sum_rows().unwrap().data(), &[4., 6.]);
        assert_eq!(a.sum_cols().unwrap().data(), &[3., 7.]);
        let v = Tensor::<f64>::vector(vec![1., 2.]);
        assert_eq!(v.broadcast_rows(2).unwrap().data(), &[1., 2., 1., 2.]);
        assert_eq!(v.broadcast_cols(2).unwrap().data(), &[1., 1., 2., 2.]);
    }

    #[test]
    fn slicing_padding_concat() {
        let a = Tensor::<f64>::from_f64(&[3, 1], &[1., 2., 3.]).unwrap();
        let s = a.slice_rows(1, 2).unwrap();
        assert_eq!(s.data(), &[2., 3.]);
        let p = s.pad_rows(1, 4).unwrap();
        assert_eq!(p.data(), &[0., 2., 3., 0.]);
        let c = Tensor::concat_rows(&[&a, &s]).unwrap();
        assert_eq!(c.shape(), &[5, 1]);
    }

    #[test]
    fn live_bytes_track_drops() {
        let before = memory::live_bytes();
        {
            let _t = Tensor::<f64>::zeros(&[16]);
            assert_eq!(memory::live_bytes(), before + 128);
        }
        assert_eq!(memory::live_bytes(), before);
    }
}
