//! Annealed Langevin dynamics driven by a model score.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Scalar, Tensor};

/// Any coordinate beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Chains advanced together in one batched score call.
const CHAIN_BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    sigmas: Vec<f64>,
    steps_per_level: usize,
    base_step: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self::geometric(1.0, 0.01, 10, 100, 1e-3).expect("valid defaults")
    }
}

impl AnnealSchedule {
    /// `levels` noise scales spaced geometrically from `first` down to `last`.
    pub fn geometric(first: f64, last: f64, levels: usize, steps_per_level: usize, base_step: f64) -> Result<Self> {
        if levels == 0 || !(first > 0.0) || !(last > 0.0) || !(base_step > 0.0) {
            return Err(Error::Argument("schedule needs positive scales, step and levels".into()));
        }
        if levels > 1 && !(first > last) {
            return Err(Error::Argument(format!(
                "noise scales must decrease, got {first} -> {last}"
            )));
        }
        let sigmas = if levels == 1 {
            vec![last]
        } else {
            let ratio = (last / first).powf(1.0 / (levels - 1) as f64);
            (0..levels).map(|i| first * ratio.powi(i as i32)).collect()
        };
        Ok(Self {
            sigmas,
            steps_per_level,
            base_step,
        })
    }

    /// Plain (unannealed) Langevin with a fixed step.
    pub fn constant(step: f64, steps: usize) -> Result<Self> {
        Self::geometric(1.0, 1.0, 1, steps, step)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn steps_per_level(&self) -> usize {
        self.steps_per_level
    }

    /// `base * (sigma_i / sigma_L)^2`.
    pub fn step_size(&self, level: usize) -> f64 {
        let last = *self.sigmas.last().expect("non-empty");
        self.base_step * (self.sigmas[level] / last).powi(2)
    }
}

/// Run `n` chains from uniform draws in `[-half_extent, half_extent]^d`.
///
/// Chain `i` uses its own random stream, so results do not depend on
/// `threads` (1 = sequential, 0 = one per core).
pub fn langevin<F>(
    score: F,
    dim: usize,
    n: usize,
    schedule: &AnnealSchedule,
    half_extent: f64,
    seed: u64,
    threads: usize,
) -> Result<Tensor<f64>>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>> + Sync,
{
    if dim == 0 || !(half_extent > 0.0) {
        return Err(Error::Argument("need dim > 0 and a positive box".into()));
    }
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(CHAIN_BLOCK)
        .map(|s| (s, CHAIN_BLOCK.min(n - s)))
        .collect();
    let run = |&(start, len): &(usize, usize)| run_block(&score, dim, start, len, schedule, half_extent, seed);
    let parts: Vec<Result<Vec<f64>>> = if threads == 1 {
        blocks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        pool.install(|| blocks.par_iter().map(run).collect())
    };
    let mut data = Vec::with_capacity(n * dim);
    for p in parts {
        data.extend(p?);
    }
    Tensor::new(&[n, dim], data)
}

fn run_block<F>(
    score: &F,
    dim: usize,
    start: usize,
    len: usize,
    schedule: &AnnealSchedule,
    h: f64,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let mut rngs: Vec<ChaCha8Rng> = (start..start + len)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut x: Vec<f64> = rngs
        .iter_mut()
        .flat_map(|r| (0..dim).map(|_| r.random_range(-h..=h)).collect::<Vec<_>>())
        .collect();
    for level in 0..schedule.sigmas.len() {
        let eta = schedule.step_size(level);
        let noise = eta.sqrt();
        for step in 0..schedule.steps_per_level {
            let s = score(&Tensor::new(&[len, dim], x.clone())?)?;
            if s.shape() != [len, dim] {
                return Err(crate::error::shape_err("langevin score", s.shape(), &[len, dim]));
            }
            for (c, rng) in rngs.iter_mut().enumerate() {
                for j in 0..dim {
                    let k = c * dim + j;
                    let z: f64 = rng.sample(StandardNormal);
                    x[k] += 0.5 * eta * s.data()[k] + noise * z;
                    if !(x[k].abs() <= DIVERGENCE_LIMIT) {
                        return Err(Error::Diverged {
                            level,
                            step,
                            magnitude: x[k].abs(),
                        });
                    }
                }
            }
        }
    }
    Ok(x)
}

/// [`langevin`] with the score of a trained model.
pub fn sample_model<T: Scalar>(
    model: &Model<T>,
    n: usize,
    schedule: &AnnealSchedule,
    half_extent: f64,
    seed: u64,
    threads: usize,
) -> Result<Tensor<f64>> {
    langevin(
        |x| Ok(model.score_values(&x.cast::<T>())?.cast::<f64>()),
        model.dim(),
        n,
        schedule,
        half_extent,
        seed,
        threads,
    )
}
