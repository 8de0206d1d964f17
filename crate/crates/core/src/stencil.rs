//! Finite-difference stencils for `T`-th order directional derivatives.
//!
//! A stencil is a set of offsets `o_j` and weights `w_j` such that
//!
//! ```text
//! sum_j w_j f(x + o_j v)  ~=  (v . grad)^T f(x)
//! ```
//!
//! with error `O(|v|^(T+2))` for the symmetric family and `o(|v|^T)` for the
//! general family. Coefficients come from a Vandermonde solve.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Systems up to this size are solved in exact rational arithmetic.
pub const EXACT_SOLVE_MAX: usize = 8;

/// Float solves with a 1-norm condition estimate above this emit a warning.
pub const CONDITION_WARN: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum SolvePath {
    Exact,
    Float { condition: f64 },
}

/// Solution of `sum_i beta_i z_i^j = [j == n-1]` for `j = 0..n`.
#[derive(Debug, Clone)]
struct VandermondeSolution {
    betas: Vec<f64>,
    exact: Option<Vec<BigRational>>,
    path: SolvePath,
    warning: Option<String>,
}

fn rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::Argument(format!("non-finite offset {x}")))
}

fn solve_vandermonde(nodes: &[f64]) -> Result<VandermondeSolution> {
    let n = nodes.len();
    if n <= EXACT_SOLVE_MAX {
        let z: Vec<BigRational> = nodes.iter().map(|&x| rational(x)).collect::<Result<_>>()?;
        let mut m: Vec<Vec<BigRational>> = (0..n)
            .map(|j| {
                let mut row: Vec<BigRational> = z.iter().map(|zi| pow(zi, j)).collect();
                row.push(if j == n - 1 {
                    BigRational::one()
                } else {
                    BigRational::zero()
                });
                row
            })
            .collect();
        let betas = gauss_exact(&mut m)?;
        let floats = betas.iter().map(|b| b.to_f64().unwrap_or(f64::NAN)).collect();
        return Ok(VandermondeSolution {
            betas: floats,
            exact: Some(betas),
            path: SolvePath::Exact,
            warning: None,
        });
    }

    let a: Vec<Vec<f64>> = (0..n).map(|j| nodes.iter().map(|z| z.powi(j as i32)).collect()).collect();
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let mut betas = gauss_float(a.clone(), rhs.clone())?;
    // Two rounds of iterative refinement.
    for _ in 0..2 {
        let r: Vec<f64> = (0..n)
            .map(|j| rhs[j] - a[j].iter().zip(&betas).map(|(x, b)| x * b).sum::<f64>())
            .collect();
        let dx = gauss_float(a.clone(), r)?;
        for (b, d) in betas.iter_mut().zip(dx) {
            *b += d;
        }
    }
    let condition = condition_1norm(&a)?;
    let warning = (condition > CONDITION_WARN).then(|| {
        format!("Vandermonde system of size {n} is ill-conditioned (cond_1 ~ {condition:.3e})")
    });
    Ok(VandermondeSolution {
        betas,
        exact: None,
        path: SolvePath::Float { condition },
        warning,
    })
}

fn pow(x: &BigRational, k: usize) -> BigRational {
    let mut acc = BigRational::one();
    for _ in 0..k {
        acc *= x;
    }
    acc
}

/// Gauss-Jordan elimination on an augmented `n x (n+1)` rational matrix.
fn gauss_exact(m: &mut [Vec<BigRational>]) -> Result<Vec<BigRational>> {
    let n = m.len();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !m[r][col].is_zero())
            .ok_or_else(|| Error::Argument("singular Vandermonde system (repeated offsets)".into()))?;
        m.swap(col, pivot);
        let p = m[col][col].clone();
        for c in col..=n {
            m[col][c] = &m[col][c] / &p;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for c in col..=n {
                    let delta = &f * &m[col][c];
                    m[r][c] -= delta;
                }
            }
        }
    }
    Ok(m.iter().map(|row| row[n].clone()).collect())
}

/// Partial-pivot elimination in `f64`.
fn gauss_float(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[pivot][col] == 0.0 {
            return Err(Error::Argument("singular Vandermonde system (repeated offsets)".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

fn norm1(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n).map(|c| (0..n).map(|r| a[r][c].abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn condition_1norm(a: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = gauss_float(a.to_vec(), e)?;
        for r in 0..n {
            inv[r][c] = col[r];
        }
    }
    Ok(norm1(a) * norm1(&inv))
}

fn factorial(t: usize) -> f64 {
    (1..=t).map(|k| k as f64).product()
}

fn check_distinct(values: &[f64], what: &str) -> Result<()> {
    for (i, a) in values.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::Argument(format!("{what} must be finite, got {a}")));
        }
        if values[..i].contains(a) {
            return Err(Error::Argument(format!("duplicate {what} {a}")));
        }
    }
    Ok(())
}

/// Symmetric stencil with offsets `±alpha_k` (plus the centre when `T` is even).
#[derive(Debug, Clone)]
pub struct SymmetricStencil {
    order: usize,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    exact_betas: Option<Vec<BigRational>>,
    path: SolvePath,
    warning: Option<String>,
}

impl SymmetricStencil {
    /// Half-width `K = ceil(T / 2)`.
    pub fn half_width(order: usize) -> usize {
        order.div_ceil(2)
    }

    /// Offsets `1, 2, ..., K`.
    pub fn default_alphas(order: usize) -> Vec<f64> {
        (1..=Self::half_width(order)).map(|k| k as f64).collect()
    }

    pub fn with_default_alphas(order: usize) -> Result<Self> {
        Self::solve(order, &Self::default_alphas(order))
    }

    /// Solve `V^T beta = e_K` with `V_ij = alpha_i^(2j - 2)`.
    pub fn solve(order: usize, alphas: &[f64]) -> Result<Self> {
        if order < 1 {
            return Err(Error::Argument("stencil order must be >= 1".into()));
        }
        let k = Self::half_width(order);
        if alphas.len() != k {
            return Err(Error::Argument(format!(
                "order {order} needs K = {k} offsets, got {}",
                alphas.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0)) {
            return Err(Error::Argument(format!("offsets must be positive, got {a}")));
        }
        check_distinct(alphas, "offset")?;
        let nodes: Vec<f64> = alphas.iter().map(|a| a * a).collect();
        let sol = solve_vandermonde(&nodes)?;
        Ok(Self {
            order,
            alphas: alphas.to_vec(),
            betas: sol.betas,
            exact_betas: sol.exact,
            path: sol.path,
            warning: sol.warning,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn half_width_k(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Exact coefficients when the rational path was taken.
    pub fn exact_betas(&self) -> Option<&[BigRational]> {
        self.exact_betas.as_deref()
    }

    pub fn includes_center(&self) -> bool {
        self.order % 2 == 0
    }

    pub fn solve_path(&self) -> &SolvePath {
        &self.path
    }

    pub fn condition_warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// Max violation of `sum_k beta_k alpha_k^(2j-2) = [j == K]`.
    /// Evaluated in exact arithmetic on the rational path.
    pub fn residual(&self) -> f64 {
        let nodes: Vec<f64> = self.alphas.iter().map(|a| a * a).collect();
        residual(&nodes, &self.betas, self.exact_betas.as_deref())
    }
}

/// Stencil over `T + 1` arbitrary distinct offsets `gamma_i`.
#[derive(Debug, Clone)]
pub struct GeneralStencil {
    order: usize,
    gammas: Vec<f64>,
    betas: Vec<f64>,
    exact_betas: Option<Vec<BigRational>>,
    path: SolvePath,
    warning: Option<String>,
}

impl GeneralStencil {
    /// Solve `sum_i beta_i gamma_i^t = [t == T]` for `t = 0..=T`.
    pub fn solve(order: usize, gammas: &[f64]) -> Result<Self> {
        if order < 1 {
            return Err(Error::Argument("stencil order must be >= 1".into()));
        }
        if gammas.len() != order + 1 {
            return Err(Error::Argument(format!(
                "order {order} needs {} offsets, got {}",
                order + 1,
                gammas.len()
            )));
        }
        check_distinct(gammas, "offset")?;
        let sol = solve_vandermonde(gammas)?;
        Ok(Self {
            order,
            gammas: gammas.to_vec(),
            betas: sol.betas,
            exact_betas: sol.exact,
            path: sol.path,
            warning: sol.warning,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn exact_betas(&self) -> Option<&[BigRational]> {
        self.exact_betas.as_deref()
    }

    pub fn solve_path(&self) -> &SolvePath {
        &self.path
    }

    pub fn condition_warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    pub fn residual(&self) -> f64 {
        residual(&self.gammas, &self.betas, self.exact_betas.as_deref())
    }
}

fn residual(nodes: &[f64], betas: &[f64], exact: Option<&[BigRational]>) -> f64 {
    let n = nodes.len();
    if let Some(exact) = exact {
        let z: Vec<BigRational> = nodes.iter().map(|&x| rational(x).expect("finite")).collect();
        let mut worst = BigRational::zero();
        for j in 0..n {
            let mut s: BigRational = z.iter().zip(exact).map(|(zi, b)| pow(zi, j) * b).sum();
            if j == n - 1 {
                s -= BigRational::one();
            }
            if s.abs() > worst {
                worst = s.abs();
            }
        }
        return worst.to_f64().unwrap_or(f64::INFINITY);
    }
    (0..n)
        .map(|j| {
            let s: f64 = nodes.iter().zip(betas).map(|(z, b)| z.powi(j as i32) * b).sum();
            (s - if j == n - 1 { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

/// Either stencil family, reduced to offsets and weights.
#[derive(Debug, Clone)]
pub enum Stencil {
    Symmetric(SymmetricStencil),
    General(GeneralStencil),
}

impl From<SymmetricStencil> for Stencil {
    fn from(s: SymmetricStencil) -> Self {
        Stencil::Symmetric(s)
    }
}

impl From<GeneralStencil> for Stencil {
    fn from(s: GeneralStencil) -> Self {
        Stencil::General(s)
    }
}

impl Stencil {
    pub fn order(&self) -> usize {
        match self {
            Stencil::Symmetric(s) => s.order,
            Stencil::General(s) => s.order,
        }
    }

    /// `(offset, weight)` pairs: `sum_j w_j f(x + o_j v) ~= (v . grad)^T f(x)`.
    ///
    /// Symmetric even order: `T!/2 sum_k beta_k alpha_k^-2 [f(x+a v) + f(x-a v) - 2 f(x)]`;
    /// odd order: `T!/2 sum_k beta_k alpha_k^-1 [f(x+a v) - f(x-a v)]`;
    /// general: `T! sum_i beta_i f(x + gamma_i v)`.
    pub fn terms(&self) -> Vec<(f64, f64)> {
        let tf = factorial(self.order());
        match self {
            Stencil::Symmetric(s) => {
                let mut terms = Vec::with_capacity(2 * s.alphas.len() + 1);
                if s.includes_center() {
                    let center: f64 = s
                        .alphas
                        .iter()
                        .zip(&s.betas)
                        .map(|(a, b)| b / (a * a))
                        .sum();
                    terms.push((0.0, -tf * center));
                }
                for (&a, &b) in s.alphas.iter().zip(&s.betas) {
                    if s.includes_center() {
                        let w = 0.5 * tf * b / (a * a);
                        terms.push((a, w));
                        terms.push((-a, w));
                    } else {
                        let w = 0.5 * tf * b / a;
                        terms.push((a, w));
                        terms.push((-a, -w));
                    }
                }
                terms
            }
            Stencil::General(s) => s.gammas.iter().zip(&s.betas).map(|(&g, &b)| (g, tf * b)).collect(),
        }
    }

    /// Number of function evaluations per estimate.
    pub fn evaluations(&self) -> usize {
        match self {
            Stencil::Symmetric(s) => 2 * s.alphas.len() + usize::from(s.includes_center()),
            Stencil::General(s) => s.gammas.len(),
        }
    }
}

/// FD estimate of a directional derivative.
#[derive(Debug, Clone)]
pub struct FdEstimate {
    /// `(v . grad)^T f(x)`, i.e. `eps^T` times the derivative along `v / |v|`.
    pub value: f64,
    pub epsilon: f64,
    pub order: usize,
    /// Function evaluations issued.
    pub evaluations: usize,
    /// Evaluator calls (1 on the batched path).
    pub batch_calls: usize,
    pub derivative_passes: usize,
    /// Set when `eps` is small enough that cancellation dominates.
    pub precision_warning: Option<String>,
}

impl FdEstimate {
    /// Derivative along the unit direction `v / |v|`.
    pub fn raw(&self) -> f64 {
        self.value / self.epsilon.powi(self.order as i32)
    }
}

fn shifted_batch<T: Scalar>(x: &Tensor<T>, v: &Tensor<T>, offsets: &[f64]) -> Result<Tensor<T>> {
    if x.shape() != v.shape() || x.ndim() != 1 {
        return Err(crate::error::shape_err("fd_directional", x.shape(), v.shape()));
    }
    let d = x.numel();
    let mut data = Vec::with_capacity(offsets.len() * d);
    for &o in offsets {
        let o = T::from_f64_lossy(o);
        data.extend(x.data().iter().zip(v.data()).map(|(&xi, &vi)| xi + o * vi));
    }
    Tensor::new(&[offsets.len(), d], data)
}

fn combine<T: Scalar>(
    stencil: &Stencil,
    terms: &[(f64, f64)],
    values: &[f64],
    v: &Tensor<T>,
    batch_calls: usize,
) -> FdEstimate {
    let value = terms.iter().zip(values).map(|((_, w), f)| w * f).sum();
    let epsilon = v.norm().as_f64();
    let scale = terms
        .iter()
        .zip(values)
        .find(|((o, _), _)| *o == 0.0)
        .map(|(_, f)| f.abs())
        .unwrap_or_else(|| values.iter().map(|f| f.abs()).sum::<f64>() / values.len() as f64);
    let guard = 1e3 * T::epsilon().as_f64() * (1.0 + scale);
    let precision_warning = (epsilon < guard).then(|| {
        format!("eps = {epsilon:e} below precision guard {guard:e}; cancellation dominates")
    });
    FdEstimate {
        value,
        epsilon,
        order: stencil.order(),
        evaluations: values.len(),
        batch_calls,
        derivative_passes: 0,
        precision_warning,
    }
}

/// FD estimate of `(v . grad)^T f(x)` for a batch evaluator `f: [n, d] -> [n]`.
///
/// All shifted points go to `f` as one concatenated batch.
pub fn fd_directional<T, F>(f: F, x: &Tensor<T>, v: &Tensor<T>, stencil: &Stencil) -> Result<FdEstimate>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let terms = stencil.terms();
    let offsets: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let batch = shifted_batch(x, v, &offsets)?;
    let out = f(&batch)?;
    if out.numel() != offsets.len() {
        return Err(crate::error::shape_err("fd_directional", out.shape(), &[offsets.len()]));
    }
    Ok(combine(stencil, &terms, &out.to_f64_vec(), v, 1))
}

/// As [`fd_directional`], but each shifted point is evaluated as its own
/// call, concurrently.
pub fn fd_directional_parallel<T, F>(
    f: F,
    x: &Tensor<T>,
    v: &Tensor<T>,
    stencil: &Stencil,
) -> Result<FdEstimate>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync,
{
    let terms = stencil.terms();
    let values = terms
        .par_iter()
        .map(|&(o, _)| {
            let row = shifted_batch(x, v, &[o])?;
            Ok(f(&row)?.item().as_f64())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(combine(stencil, &terms, &values, v, values.len()))
}

/// Render exact coefficients as `p/q` strings.
pub fn format_rational(r: &BigRational) -> String {
    if r.denom() == &BigInt::one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(p: i64, q: i64) -> BigRational {
        BigRational::new(p.into(), q.into())
    }

    #[test]
    fn single_pair_instantiation_has_unit_beta() {
        for order in [1, 2] {
            let s = SymmetricStencil::solve(order, &[1.0]).unwrap();
            assert_eq!(s.betas(), &[1.0]);
            assert_eq!(s.exact_betas().unwrap(), &[rat(1, 1)]);
        }
    }

    #[test]
    fn fourth_order_two_pairs() {
        let s = SymmetricStencil::solve(4, &[1.0, 2.0]).unwrap();
        assert_eq!(s.exact_betas().unwrap(), &[rat(-1, 3), rat(1, 3)]);
        assert_eq!(s.residual(), 0.0);
        assert!(s.includes_center());
    }

    #[test]
    fn general_stencils() {
        let s = GeneralStencil::solve(1, &[-1.0, 1.0]).unwrap();
        assert_eq!(s.exact_betas().unwrap(), &[rat(-1, 2), rat(1, 2)]);
        let s = GeneralStencil::solve(2, &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(s.exact_betas().unwrap(), &[rat(1, 2), rat(-1, 1), rat(1, 2)]);
        let s = GeneralStencil::solve(1, &[0.0, 1.0]).unwrap();
        assert_eq!(s.betas(), &[-1.0, 1.0]);
    }

    #[test]
    fn argument_errors() {
        assert!(SymmetricStencil::solve(3, &[1.0, 1.0]).is_err());
        assert!(SymmetricStencil::solve(3, &[1.0, -2.0]).is_err());
        assert!(SymmetricStencil::solve(3, &[1.0]).is_err());
        assert!(SymmetricStencil::solve(0, &[]).is_err());
        assert!(GeneralStencil::solve(2, &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn float_path_for_large_systems() {
        let s = SymmetricStencil::with_default_alphas(20).unwrap();
        assert!(matches!(s.solve_path(), SolvePath::Float { .. }));
        // Ten nodes 1..100 squared: badly conditioned, so the warning fires.
        assert!(s.condition_warning().is_some());
        let small = SymmetricStencil::with_default_alphas(17).unwrap();
        assert!(matches!(small.solve_path(), SolvePath::Float { .. }));
        let cheb: Vec<f64> = (0..10)
            .map(|i| ((2 * i + 1) as f64 * std::f64::consts::PI / 20.0).cos())
            .collect();
        let g = GeneralStencil::solve(9, &cheb).unwrap();
        assert!(matches!(g.solve_path(), SolvePath::Float { .. }));
        assert!(g.condition_warning().is_none());
        assert!(g.residual() < 1e-12, "{}", g.residual());
    }

    #[test]
    fn evaluation_counts() {
        for t in 1..=6 {
            let s: Stencil = SymmetricStencil::with_default_alphas(t).unwrap().into();
            let expect = 2 * t.div_ceil(2) + usize::from(t % 2 == 0);
            assert_eq!(s.evaluations(), expect);
            assert_eq!(s.terms().len(), expect);
        }
    }

    fn sq_norm(b: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(Tensor::vector((0..b.rows()).map(|i| b.row(i).iter().map(|x| x * x).sum()).collect()))
    }

    #[test]
    fn constant_function_gives_zero() {
        let s: Stencil = SymmetricStencil::with_default_alphas(2).unwrap().into();
        let x = Tensor::vector(vec![0.3, 0.4]);
        let v = Tensor::vector(vec![0.1, 0.0]);
        let est = fd_directional(|b: &Tensor<f64>| Ok(Tensor::full(&[b.rows()], 7.5)), &x, &v, &s).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn squared_norm_second_order_is_exact() {
        let s: Stencil = SymmetricStencil::with_default_alphas(2).unwrap().into();
        let x = Tensor::vector(vec![1.5, -0.5]);
        let v = Tensor::vector(vec![0.06, 0.08]);
        let est = fd_directional(sq_norm, &x, &v, &s).unwrap();
        assert!((est.value - 0.02).abs() < 1e-15, "{}", est.value);
        assert_eq!((est.evaluations, est.batch_calls, est.derivative_passes), (3, 1, 0));
        assert!(est.precision_warning.is_none());
    }

    #[test]
    fn parallel_matches_batched() {
        let s: Stencil = SymmetricStencil::with_default_alphas(4).unwrap().into();
        let x = Tensor::vector(vec![0.2, -0.1]);
        let v = Tensor::vector(vec![0.05, 0.02]);
        let f = |b: &Tensor<f64>| {
            Ok(Tensor::vector((0..b.rows()).map(|i| b.row(i)[0].sin() * b.row(i)[1].exp()).collect()))
        };
        let a = fd_directional(f, &x, &v, &s).unwrap();
        let p = fd_directional_parallel(f, &x, &v, &s).unwrap();
        assert!((a.value - p.value).abs() < 1e-15);
        assert_eq!(p.batch_calls, 5);
    }

    #[test]
    fn tiny_epsilon_triggers_precision_warning() {
        let s: Stencil = SymmetricStencil::with_default_alphas(2).unwrap().into();
        let x = Tensor::vector(vec![1.0]);
        let v = Tensor::vector(vec![1e-14]);
        let est = fd_directional(sq_norm, &x, &v, &s).unwrap();
        assert!(est.precision_warning.is_some());
    }
}
