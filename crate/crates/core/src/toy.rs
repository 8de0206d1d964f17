//! Two-dimensional synthetic densities with closed-form log-density and score.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DIM: usize = 2;

/// Isotropic Gaussian mixture with equal weights and a shared scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub means: Vec<[f64; 2]>,
    pub sigma: f64,
}

impl GaussianMixture {
    /// `k` modes equally spaced on a circle.
    pub fn ring_of_modes(k: usize, radius: f64, sigma: f64) -> Self {
        let means = (0..k)
            .map(|i| {
                let t = TAU * i as f64 / k as f64;
                [radius * t.cos(), radius * t.sin()]
            })
            .collect();
        Self { means, sigma }
    }

    /// Smoothed checkerboard: one mode per dark cell of a 4x4 board on `[-2, 2]^2`.
    pub fn checkerboard(sigma: f64) -> Self {
        let mut means = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if (i + j) % 2 == 0 {
                    means.push([-1.5 + i as f64, -1.5 + j as f64]);
                }
            }
        }
        Self { means, sigma }
    }

    /// Per-mode log responsibilities (unnormalised) and their log-sum-exp.
    fn log_terms(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let s2 = self.sigma * self.sigma;
        let terms: Vec<f64> = self
            .means
            .iter()
            .map(|m| -((x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2)) / (2.0 * s2))
            .collect();
        let lse = log_sum_exp(&terms);
        (terms, lse)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let (_, lse) = self.log_terms(x);
        lse - (self.means.len() as f64).ln() - (TAU * self.sigma * self.sigma).ln()
    }

    fn score(&self, x: &[f64]) -> [f64; 2] {
        let (terms, lse) = self.log_terms(x);
        let s2 = self.sigma * self.sigma;
        let mut g = [0.0; 2];
        for (m, t) in self.means.iter().zip(terms) {
            let r = (t - lse).exp();
            g[0] += r * (m[0] - x[0]) / s2;
            g[1] += r * (m[1] - x[1]) / s2;
        }
        g
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let m = self.means[rng.random_range(0..self.means.len())];
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        [m[0] + self.sigma * z0, m[1] + self.sigma * z1]
    }
}

/// Concentric rings: radius drawn from an equal-weight mixture of
/// `N(r_k, width^2)`, angle uniform. The density in the plane carries the
/// polar Jacobian `1 / (2 pi r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rings {
    pub radii: Vec<f64>,
    pub width: f64,
}

impl Rings {
    fn radial_terms(&self, r: f64) -> (Vec<f64>, f64) {
        let terms: Vec<f64> = self
            .radii
            .iter()
            .map(|rk| -(r - rk).powi(2) / (2.0 * self.width * self.width))
            .collect();
        let lse = log_sum_exp(&terms);
        (terms, lse)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let r = x[0].hypot(x[1]);
        let (_, lse) = self.radial_terms(r);
        lse - (self.radii.len() as f64).ln() - 0.5 * (TAU * self.width * self.width).ln() - (TAU * r).ln()
    }

    fn score(&self, x: &[f64]) -> [f64; 2] {
        let r = x[0].hypot(x[1]);
        let (terms, lse) = self.radial_terms(r);
        let w2 = self.width * self.width;
        let dr: f64 = self
            .radii
            .iter()
            .zip(terms)
            .map(|(rk, t)| (t - lse).exp() * (rk - r) / w2)
            .sum::<f64>()
            - 1.0 / r;
        [dr * x[0] / r, dr * x[1] / r]
    }

    fn sample_one(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let rk = self.radii[rng.random_range(0..self.radii.len())];
        let z: f64 = rng.sample(StandardNormal);
        let r = (rk + self.width * z).abs();
        let t = rng.random_range(0.0..TAU);
        [r * t.cos(), r * t.sin()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToyDensity {
    StandardGaussian,
    Mixture(GaussianMixture),
    Rings(Rings),
}

const TOKENS: &str = "gauss2, mog8, rings, checker";

impl ToyDensity {
    pub fn gauss2() -> Self {
        ToyDensity::StandardGaussian
    }

    /// Eight modes on a radius-2 circle, scale 0.1.
    pub fn mog8() -> Self {
        ToyDensity::Mixture(GaussianMixture::ring_of_modes(8, 2.0, 0.1))
    }

    pub fn rings() -> Self {
        ToyDensity::Rings(Rings {
            radii: vec![1.0, 2.0],
            width: 0.1,
        })
    }

    pub fn checker() -> Self {
        ToyDensity::Mixture(GaussianMixture::checkerboard(0.25))
    }

    /// Square `[-h, h]^2` that holds essentially all of the mass.
    pub fn half_extent(&self) -> f64 {
        match self {
            ToyDensity::StandardGaussian => 4.0,
            ToyDensity::Mixture(m) => {
                m.means.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max) + 5.0 * m.sigma
            }
            ToyDensity::Rings(r) => r.radii.iter().copied().fold(0.0, f64::max) + 5.0 * r.width,
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            ToyDensity::StandardGaussian => -0.5 * (x[0] * x[0] + x[1] * x[1]) - (TAU).ln(),
            ToyDensity::Mixture(m) => m.log_density(x),
            ToyDensity::Rings(r) => r.log_density(x),
        }
    }

    /// Gradient of the log-density.
    pub fn true_score(&self, x: &[f64]) -> [f64; 2] {
        match self {
            ToyDensity::StandardGaussian => [-x[0], -x[1]],
            ToyDensity::Mixture(m) => m.score(x),
            ToyDensity::Rings(r) => r.score(x),
        }
    }

    pub fn true_score_batch(&self, x: &Tensor<f64>) -> Tensor<f64> {
        let data = (0..x.rows()).flat_map(|i| self.true_score(x.row(i))).collect();
        Tensor::new(&[x.rows(), DIM], data).expect("shape is consistent")
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let mut data = Vec::with_capacity(n * DIM);
        for _ in 0..n {
            let p = match self {
                ToyDensity::StandardGaussian => [rng.sample(StandardNormal), rng.sample(StandardNormal)],
                ToyDensity::Mixture(m) => m.sample_one(rng),
                ToyDensity::Rings(r) => r.sample_one(rng),
            };
            data.extend_from_slice(&p);
        }
        Tensor::new(&[n, DIM], data).expect("shape is consistent")
    }

    pub fn token(&self) -> &'static str {
        match self {
            ToyDensity::StandardGaussian => "gauss2",
            ToyDensity::Mixture(m) if m.means.len() == 8 && m.sigma == 0.1 => "mog8",
            ToyDensity::Mixture(_) => "checker",
            ToyDensity::Rings(_) => "rings",
        }
    }
}

impl FromStr for ToyDensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss2" => Ok(Self::gauss2()),
            "mog8" => Ok(Self::mog8()),
            "rings" => Ok(Self::rings()),
            "checker" => Ok(Self::checker()),
            _ => Err(Error::UnknownToken {
                kind: "dataset",
                got: s.to_string(),
                valid: TOKENS.into(),
            }),
        }
    }
}

impl fmt::Display for ToyDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// `1/2 E ||s(x) - grad log p(x)||^2` over `n` fresh samples.
///
/// `score_fn` is called on chunks of at most 4096 rows.
pub fn fisher_divergence<F>(density: &ToyDensity, mut score_fn: F, n: usize, seed: u64) -> Result<McEstimate>
where
    F: FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    if n == 0 {
        return Err(Error::Argument("need at least one evaluation sample".into()));
    }
    let x = density.sample(n, seed);
    let mut vals = Vec::with_capacity(n);
    let chunk = 4096;
    let mut start = 0;
    while start < n {
        let len = chunk.min(n - start);
        let xb = x.slice_rows(start, len)?;
        let s = score_fn(&xb)?;
        if s.shape() != xb.shape() {
            return Err(crate::error::shape_err("fisher score", s.shape(), xb.shape()));
        }
        for i in 0..len {
            let t = density.true_score(xb.row(i));
            let r = s.row(i);
            vals.push(0.5 * ((r[0] - t[0]).powi(2) + (r[1] - t[1]).powi(2)));
        }
        start += len;
    }
    Ok(mean_and_se(&vals))
}

pub fn mean_and_se(vals: &[f64]) -> McEstimate {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_score_is_minus_x() {
        assert_eq!(ToyDensity::gauss2().true_score(&[1.0, 0.0]), [-1.0, -0.0]);
    }

    #[test]
    fn parse_rejects_unknown_with_token_list() {
        let err = "moons".parse::<ToyDensity>().unwrap_err().to_string();
        assert!(err.contains("gauss2") && err.contains("checker"));
        for t in ["gauss2", "mog8", "rings", "checker"] {
            assert_eq!(t.parse::<ToyDensity>().unwrap().token(), t);
        }
    }

    #[test]
    fn mixture_normalises() {
        // Riemann sum over the bounding square.
        for d in [ToyDensity::mog8(), ToyDensity::checker(), ToyDensity::gauss2()] {
            let h = d.half_extent();
            let n = 800;
            let dx = 2.0 * h / n as f64;
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = [-h + (i as f64 + 0.5) * dx, -h + (j as f64 + 0.5) * dx];
                    total += d.log_density(&x).exp() * dx * dx;
                }
            }
            assert!((total - 1.0).abs() < 2e-3, "{d}: {total}");
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
