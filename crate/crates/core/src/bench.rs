//! Cost of higher-order directional derivatives and of one training step,
//! in wall time and in deterministic counters.

use std::fmt;
use std::time::Instant;

use crate::autodiff::{exact_directional_derivative, Counters, Tape};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::objectives::{self, Objective, ObjectiveInput};
use crate::stencil::{fd_directional, fd_directional_parallel, Stencil, SymmetricStencil};
use crate::tensor::{memory, Scalar, Tensor};

pub const CSV_HEADER: &str = "method,T,wall_ms,fwd_evals,deriv_passes,peak_bytes,rel_err";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    ExactNested,
    Fd,
    FdParallel,
    Objective(Objective),
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchMethod::ExactNested => f.write_str("exact-nested"),
            BenchMethod::Fd => f.write_str("fd"),
            BenchMethod::FdParallel => f.write_str("fd-parallel"),
            BenchMethod::Objective(o) => write!(f, "{o}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub repeats: usize,
    pub warmups: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 20,
            warmups: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: BenchMethod,
    /// Derivative order; `None` for objective timings.
    pub order: Option<usize>,
    /// Median over the timed repeats.
    pub wall_ms: f64,
    pub forward_evals: u64,
    pub derivative_passes: u64,
    /// Peak of live tensor bytes above the level at entry.
    pub peak_bytes: usize,
    pub rel_err: Option<f64>,
    /// Counter breakdown of one run (objective timings only).
    pub counters: Counters,
    pub tape_depth: u32,
}

impl BenchRecord {
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_default();
        format!(
            "{},{},{:.4},{},{},{},{}",
            self.method,
            opt(self.order.map(|t| t.to_string())),
            self.wall_ms,
            self.forward_evals,
            self.derivative_passes,
            self.peak_bytes,
            opt(self.rel_err.map(|e| format!("{e:e}")))
        )
    }
}

/// Median wall time of `f` in milliseconds after `warmups` untimed calls.
pub fn time_median<R>(opts: BenchOptions, mut f: impl FnMut() -> Result<R>) -> Result<f64> {
    for _ in 0..opts.warmups {
        f()?;
    }
    let mut times = Vec::with_capacity(opts.repeats.max(1));
    for _ in 0..opts.repeats.max(1) {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&mut times))
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Peak live tensor bytes while running `f`, relative to the entry level.
pub fn measure_peak<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, usize)> {
    let base = memory::live_bytes();
    memory::reset_peak();
    let r = f()?;
    Ok((r, memory::peak_bytes().saturating_sub(base)))
}

/// Exact nested derivative of the model log-density at one point.
pub fn exact_model_directional<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    v: &Tensor<T>,
    order: usize,
) -> Result<crate::autodiff::DirectionalDerivative> {
    let d = x.numel();
    exact_directional_derivative(
        |tape: &Tape<T>, xv| {
            let bound = model.bind(tape, false);
            Ok(bound.energy(xv.reshape(&[1, d])?)?.sum())
        },
        x,
        v,
        order,
    )
}

/// For each order `1..=t_max`: exact nested differentiation, the batched
/// symmetric stencil, and the per-point parallel stencil.
pub fn bench_order_sweep<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    v: &Tensor<T>,
    t_max: usize,
    opts: BenchOptions,
) -> Result<Vec<BenchRecord>> {
    if t_max < 2 {
        return Err(Error::Argument(format!("order sweep needs t_max >= 2, got {t_max}")));
    }
    if !model.has_energy() {
        return Err(Error::Argument("order sweep needs an energy model".into()));
    }
    let energy = |b: &Tensor<T>| model.energy_values(b);
    let mut out = Vec::new();
    for order in 1..=t_max {
        let (exact, exact_peak) = measure_peak(|| exact_model_directional(model, x, v, order))?;
        let exact_ms = time_median(opts, || exact_model_directional(model, x, v, order))?;
        out.push(BenchRecord {
            method: BenchMethod::ExactNested,
            order: Some(order),
            wall_ms: exact_ms,
            forward_evals: exact.counters.forward_evals,
            derivative_passes: exact.counters.first_order_passes + exact.counters.nested_passes,
            peak_bytes: exact_peak,
            rel_err: None,
            counters: exact.counters,
            tape_depth: exact.tape_depth,
        });

        let stencil = Stencil::from(SymmetricStencil::with_default_alphas(order)?);
        for method in [BenchMethod::Fd, BenchMethod::FdParallel] {
            let run = || match method {
                BenchMethod::Fd => fd_directional(energy, x, v, &stencil),
                _ => fd_directional_parallel(energy, x, v, &stencil),
            };
            let (est, peak) = measure_peak(run)?;
            let ms = time_median(opts, run)?;
            let rel = (est.value - exact.value).abs() / exact.value.abs().max(f64::MIN_POSITIVE);
            out.push(BenchRecord {
                method,
                order: Some(order),
                wall_ms: ms,
                forward_evals: est.evaluations as u64,
                derivative_passes: est.derivative_passes as u64,
                peak_bytes: peak,
                rel_err: Some(rel),
                counters: Counters {
                    forward_evals: est.evaluations as u64,
                    ..Counters::default()
                },
                tape_depth: 0,
            });
        }
    }
    Ok(out)
}

/// Median time of one loss evaluation plus parameter gradient.
pub fn bench_objective<T: Scalar>(
    model: &Model<T>,
    objective: Objective,
    input: &ObjectiveInput<T>,
    opts: BenchOptions,
) -> Result<BenchRecord> {
    let (eval, peak) = measure_peak(|| objectives::value_and_grad(objective, model, input))?;
    let ms = time_median(opts, || objectives::value_and_grad(objective, model, input))?;
    let c = eval.total_counters;
    Ok(BenchRecord {
        method: BenchMethod::Objective(objective),
        order: None,
        wall_ms: ms,
        forward_evals: c.forward_evals,
        derivative_passes: c.first_order_passes + c.nested_passes,
        peak_bytes: peak,
        rel_err: None,
        counters: eval.estimate.counters,
        tape_depth: eval.estimate.tape_depth,
    })
}

/// Time several objectives on the same batch, interleaving the repeats so
/// slow drifts in machine load hit every method alike.
pub fn bench_objectives_interleaved<T: Scalar>(
    model: &Model<T>,
    cases: &[(Objective, &ObjectiveInput<T>)],
    opts: BenchOptions,
) -> Result<Vec<BenchRecord>> {
    let mut records = cases
        .iter()
        .map(|&(o, input)| {
            let mut r = bench_objective(model, o, input, BenchOptions { repeats: 1, warmups: 0 })?;
            r.wall_ms = 0.0;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..opts.warmups {
        for &(o, input) in cases {
            objectives::value_and_grad(o, model, input)?;
        }
    }
    let mut times = vec![Vec::new(); cases.len()];
    for _ in 0..opts.repeats.max(1) {
        for (k, &(o, input)) in cases.iter().enumerate() {
            let t = Instant::now();
            objectives::value_and_grad(o, model, input)?;
            times[k].push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    for (r, mut t) in records.iter_mut().zip(times) {
        r.wall_ms = median(&mut t);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sweep_counters_follow_stencil_size_and_depth() {
        let m = Model::<f64>::energy_mlp(2, &[16, 16], 1).unwrap();
        let x = Tensor::vector(vec![0.3, -0.2]);
        let v = Tensor::vector(vec![0.06, 0.08]);
        let opts = BenchOptions { repeats: 1, warmups: 0 };
        let recs = bench_order_sweep(&m, &x, &v, 4, opts).unwrap();
        for r in &recs {
            let t = r.order.unwrap();
            match r.method {
                BenchMethod::ExactNested => assert_eq!(r.derivative_passes, t as u64),
                _ => {
                    let k = t.div_ceil(2);
                    assert_eq!(r.forward_evals as usize, 2 * k + usize::from(t % 2 == 0));
                    assert_eq!(r.derivative_passes, 0);
                }
            }
            assert!(r.wall_ms > 0.0);
        }
        assert!(bench_order_sweep(&m, &x, &v, 1, opts).is_err());
    }
}
