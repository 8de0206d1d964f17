//! Forward operations on [`Var`]s.
//!
//! Binary elementwise operations accept identical shapes, a one-element
//! operand (expanded), or a row vector `[n]` against a batch `[m, n]`
//! (broadcast over the leading batch dimension). Nothing else broadcasts.

use std::rc::Rc;

use super::tape::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softplus and its derivative (the sigmoid) from one exponential.
fn softplus_and_sigmoid<T: Scalar>(x: T) -> (T, T) {
    let e = (-x.abs()).exp();
    let sp = x.max(T::zero()) + e.ln_1p();
    let r = T::one() / (T::one() + e);
    (sp, if x >= T::zero() { r } else { e * r })
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(self, op: Op, f: impl Fn(T) -> T) -> Var<'t, T> {
        let out = self.value().map(f);
        self.tape.record(out, op)
    }

    /// Bring `self` and `other` to a common shape under the leading-batch rule.
    fn align(self, other: Var<'t, T>, op: &'static str) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return Ok((self, other));
        }
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        if nb == 1 && sb.len() <= 1 {
            return Ok((self, other.expand(&sa)?));
        }
        if na == 1 && sa.len() <= 1 {
            return Ok((self.expand(&sb)?, other));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            return Ok((self, other.broadcast_rows(sa[0])?));
        }
        if sb.len() == 2 && sa.len() == 1 && sb[1] == sa[0] {
            return Ok((self.broadcast_rows(sb[0])?, other));
        }
        Err(shape_err(op, &sa, &sb))
    }

    fn binary(
        self,
        other: Var<'t, T>,
        name: &'static str,
        make: fn(usize, usize) -> Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        let (a, b) = self.align(other, name)?;
        let out = a.value().zip_map(&b.value(), name, f)?;
        Ok(self.tape.record(out, make(a.idx, b.idx)))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            return Ok(self.add_row(other));
        }
        if sb.len() == 2 && sa.len() == 1 && sb[1] == sa[0] {
            return Ok(other.add_row(self));
        }
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    /// `[m, n] + [n]` without materialising the broadcast.
    fn add_row(self, row: Var<'t, T>) -> Var<'t, T> {
        let (a, r) = (self.value(), row.value());
        let n = r.numel();
        let mut data = a.data().to_vec();
        for chunk in data.chunks_exact_mut(n) {
            for (x, &b) in chunk.iter_mut().zip(r.data()) {
                *x = *x + b;
            }
        }
        let out = Tensor::new(a.shape(), data).expect("same shape");
        self.tape.record(out, Op::AddRow(self.idx, row.idx))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "div", Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(Op::Neg(self.idx), |x| -x)
    }

    /// `c * self`
    pub fn scale(self, c: f64) -> Var<'t, T> {
        self.affine(c, 0.0)
    }

    /// `scale * self + shift`
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t, T> {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        self.unary(Op::Affine { a: self.idx, scale }, move |x| s * x + b)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(Op::Exp(self.idx), |x| x.exp())
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary(Op::Ln(self.idx), |x| x.ln())
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(Op::Square(self.idx), |x| x * x)
    }

    pub fn softplus(self) -> Var<'t, T> {
        let input = self.value();
        let (sp, sig): (Vec<T>, Vec<T>) = input.data().iter().map(|&x| softplus_and_sigmoid(x)).unzip();
        let shape = input.shape();
        let out = Tensor::new(shape, sp).expect("same shape");
        let sig = Tensor::new(shape, sig).expect("same shape");
        self.tape
            .record_shared(Rc::new(out), Op::Softplus(self.idx), Some(Rc::new(sig)))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.idx), sigmoid)
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` with optional transposes.
    pub fn matmul_t(self, other: Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
        let out = self.value().matmul(&other.value(), ta, tb)?;
        Ok(self.tape.record(
            out,
            Op::MatMul {
                a: self.idx,
                b: other.idx,
                ta,
                tb,
            },
        ))
    }

    /// Sum of all elements, as a scalar of shape `[]`.
    pub fn sum(self) -> Var<'t, T> {
        let s = self.value().sum_all();
        self.tape.record(Tensor::scalar(s), Op::SumAll(self.idx))
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// One-element tensor expanded to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().expand(shape)?;
        Ok(self.tape.record(out, Op::Expand(self.idx)))
    }

    /// `[m, n] -> [n]`
    pub fn sum_rows(self) -> Result<Var<'t, T>> {
        let out = self.value().sum_rows()?;
        Ok(self.tape.record(out, Op::SumRows(self.idx)))
    }

    /// `[n] -> [m, n]`
    pub fn broadcast_rows(self, m: usize) -> Result<Var<'t, T>> {
        let out = self.value().broadcast_rows(m)?;
        Ok(self.tape.record(out, Op::BroadcastRows(self.idx)))
    }

    /// `[m, n] -> [m]`
    pub fn sum_cols(self) -> Result<Var<'t, T>> {
        let out = self.value().sum_cols()?;
        Ok(self.tape.record(out, Op::SumCols(self.idx)))
    }

    /// `[m] -> [m, n]`
    pub fn broadcast_cols(self, n: usize) -> Result<Var<'t, T>> {
        let out = self.value().broadcast_cols(n)?;
        Ok(self.tape.record(out, Op::BroadcastCols(self.idx)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape.record(out, Op::Reshape(self.idx)))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let out = self.value().slice_rows(start, len)?;
        Ok(self.tape.record(out, Op::SliceRows { a: self.idx, start }))
    }

    pub fn pad_rows(self, start: usize, total: usize) -> Result<Var<'t, T>> {
        let out = self.value().pad_rows(start, total)?;
        Ok(self.tape.record(out, Op::PadRows { a: self.idx, start }))
    }

    /// Row-wise inner product: `[m, n] x [m, n] -> [m]`.
    pub fn dot_rows(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.mul(other)?.sum_cols()
    }

    /// Full inner product as a scalar.
    pub fn inner(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.mul(other)?.sum())
    }
}

impl<T: Scalar> Tape<T> {
    /// Stack row blocks along the leading dimension.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_rows(&refs)?;
        let idx: Rc<[usize]> = parts.iter().map(|p| p.idx).collect();
        Ok(self.record(out, Op::ConcatRows(idx)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_elementwise() {
        let t = Tape::<f64>::new();
        let a = t.constant(Tensor::vector(vec![1., 2.]));
        let b = t.constant(Tensor::vector(vec![3., 4.]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4., 6.]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let t = Tape::<f64>::new();
        let a = t.constant(Tensor::vector(vec![0.0]));
        assert!((a.softplus().item() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = t.constant(Tensor::vector(vec![800.0, -800.0]));
        let s = big.softplus().value();
        assert_eq!(s.data()[0], 800.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
    }

    #[test]
    fn matmul_identity() {
        let t = Tape::<f64>::new();
        let i = t.constant(Tensor::eye(2));
        let m = t.constant(Tensor::from_f64(&[2, 2], &[5., 6., 7., 8.]).unwrap());
        assert_eq!(i.matmul(m).unwrap().value().data(), &[5., 6., 7., 8.]);
    }

    #[test]
    fn batch_broadcast_only_over_leading_dim() {
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let b = t.constant(Tensor::vector(vec![10., 20., 30.]));
        assert_eq!(x.add(b).unwrap().value().data(), &[11., 22., 33., 14., 25., 36.]);
        let wrong = t.constant(Tensor::vector(vec![1., 2.]));
        let err = x.add(wrong).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }
}
