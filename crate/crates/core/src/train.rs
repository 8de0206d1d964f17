//! Mini-batch training loop with periodic evaluation against the analytic
//! data score.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::Counters;
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind};
use crate::objectives::{self, Objective, ObjectiveInput};
use crate::tensor::{Scalar, Tensor};
use crate::toy::{self, ToyDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::UnknownToken {
                kind: "optimizer",
                got: s.into(),
                valid: "sgd, adam".into(),
            }),
        }
    }
}

/// Which network family to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    /// Score network for the variance-reduced objectives, energy otherwise.
    Auto,
    Energy,
    Score,
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "energy" => Ok(Self::Energy),
            "score" => Ok(Self::Score),
            _ => Err(Error::UnknownToken {
                kind: "model",
                got: s.into(),
                valid: "auto, energy, score".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonSchedule {
    Constant,
    /// Linear from the initial epsilon down to `min` at the last iteration.
    Linear { min: f64 },
}

impl EpsilonSchedule {
    pub fn at(&self, eps0: f64, iter: usize, total: usize) -> f64 {
        match *self {
            EpsilonSchedule::Constant => eps0,
            EpsilonSchedule::Linear { min } => {
                let frac = if total == 0 { 0.0 } else { iter as f64 / total as f64 };
                eps0 + (min - eps0) * frac
            }
        }
    }
}

impl FromStr for EpsilonSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "constant" {
            return Ok(Self::Constant);
        }
        if let Some(min) = s.strip_prefix("linear:") {
            let min: f64 = min
                .parse()
                .map_err(|_| Error::Argument(format!("bad epsilon floor `{min}`")))?;
            if !(min > 0.0) {
                return Err(Error::Argument("epsilon floor must be positive".into()));
            }
            return Ok(Self::Linear { min });
        }
        Err(Error::UnknownToken {
            kind: "epsilon schedule",
            got: s.into(),
            valid: "constant, linear:<min>".into(),
        })
    }
}

impl std::fmt::Display for EpsilonSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpsilonSchedule::Constant => f.write_str("constant"),
            EpsilonSchedule::Linear { min } => write!(f, "linear:{min}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub dataset: ToyDensity,
    pub model: ModelChoice,
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub eps_schedule: EpsilonSchedule,
    pub sigma: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
    /// Worker count; 1 is the bit-reproducible single-thread mode, 0 means
    /// one per core.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::FdSsm,
            dataset: ToyDensity::mog8(),
            model: ModelChoice::Auto,
            hidden: vec![256, 256, 256],
            batch: 128,
            iterations: 2000,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            epsilon: 0.1,
            eps_schedule: EpsilonSchedule::Constant,
            sigma: 0.1,
            eval_every: 100,
            eval_samples: 2048,
            threads: 1,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "objective",
    "dataset",
    "model",
    "hidden",
    "batch",
    "iterations",
    "optimizer",
    "lr",
    "beta1",
    "beta2",
    "seed",
    "epsilon",
    "eps_decay",
    "sigma",
    "eval_every",
    "eval_samples",
    "threads",
];

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Argument(format!("`{key}` expects a number, got `{value}`")))
}

impl TrainConfig {
    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "objective" => self.objective = value.parse()?,
            "dataset" => self.dataset = value.parse()?,
            "model" => self.model = value.parse()?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num("hidden", s.trim()))
                    .collect::<Result<_>>()?
            }
            "batch" => self.batch = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => self.lr = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "eps_decay" => self.eps_schedule = value.parse()?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "eval_samples" => self.eval_samples = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            _ => {
                return Err(Error::UnknownToken {
                    kind: "config key",
                    got: key.into(),
                    valid: CONFIG_KEYS.join(", "),
                })
            }
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Config {
                line: n + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(c)
    }

    /// Every field as `key = value`, in a form `apply_text` reads back.
    pub fn to_text(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "objective = {}", self.objective);
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(
            s,
            "model = {}",
            match self.model {
                ModelChoice::Auto => "auto",
                ModelChoice::Energy => "energy",
                ModelChoice::Score => "score",
            }
        );
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(
            s,
            "optimizer = {}",
            match self.optimizer {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam => "adam",
            }
        );
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "eps_decay = {}", self.eps_schedule);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_samples = {}", self.eval_samples);
        let _ = writeln!(s, "threads = {}", self.threads);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.objective.needs_noise() && !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be at least 1");
        }
        if self.objective.needs_energy() && self.model_kind() == ModelKind::Score {
            return Err(Error::Argument(format!(
                "objective `{}` needs an energy model",
                self.objective
            )));
        }
        Ok(())
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.model {
            ModelChoice::Energy => ModelKind::Energy,
            ModelChoice::Score => ModelKind::Score,
            ModelChoice::Auto => match self.objective {
                Objective::Ssmvr | Objective::FdSsmvr => ModelKind::Score,
                _ => ModelKind::Energy,
            },
        }
    }

    pub fn init_model<T: Scalar>(&self) -> Result<Model<T>> {
        match self.model_kind() {
            ModelKind::Score => Model::score_mlp(toy::DIM, &self.hidden, self.seed),
            _ => Model::energy_mlp(toy::DIM, &self.hidden, self.seed),
        }
    }
}

/// Plain SGD or Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            kind,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, 0.9, 0.999)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, 0.9, 0.999)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One update. Nothing is modified if any gradient block is non-finite.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], names: &[String]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Argument("one gradient per parameter block".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    block: names.get(i).cloned().unwrap_or_else(|| format!("block{i}")),
                });
            }
            if g.shape() != params[i].shape() {
                return Err(crate::error::shape_err("optimizer step", g.shape(), params[i].shape()));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *pi = T::from_f64_lossy(pi.as_f64() - self.lr * gi.as_f64());
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t as i32);
                let c2 = 1.0 - self.beta2.powi(self.t as i32);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for (j, (pi, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let gi = gi.as_f64();
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gi;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gi * gi;
                        let upd = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                        *pi = T::from_f64_lossy(pi.as_f64() - upd);
                    }
                }
            }
        }
        Ok(())
    }
}

pub const LOG_HEADER: &str =
    "iter,objective,epsilon,loss,sm_exact,fisher,fisher_se,fwd_evals,first_order_passes,nested_passes,tape_depth,status,wall_ms_per_iter";

/// One log line. `wall_ms_per_iter` is the only non-deterministic field.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub objective: Objective,
    pub epsilon: f64,
    pub loss: f64,
    pub sm_exact: f64,
    pub fisher: f64,
    pub fisher_se: f64,
    pub counters: Counters,
    pub tape_depth: u32,
    pub status: &'static str,
    pub wall_ms_per_iter: f64,
}

impl LogRow {
    /// CSV line without the timing column.
    pub fn deterministic_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.objective,
            self.epsilon,
            self.loss,
            self.sm_exact,
            self.fisher,
            self.fisher_se,
            self.counters.forward_evals,
            self.counters.first_order_passes,
            self.counters.nested_passes,
            self.tape_depth,
            self.status
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{},{:.4}", self.deterministic_fields(), self.wall_ms_per_iter)
    }
}

/// Held-out data for the periodic metrics.
struct EvalSet<T: Scalar> {
    input: ObjectiveInput<T>,
    fisher_seed: u64,
}

/// Owns the model, optimizer state and data stream of one run.
pub struct Trainer<T: Scalar> {
    config: TrainConfig,
    model: Model<T>,
    names: Vec<String>,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    iter: usize,
    counters: Counters,
    last_depth: u32,
    eval: EvalSet<T>,
    pool: Option<rayon::ThreadPool>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let model = config.init_model()?;
        Self::with_model(config, model)
    }

    pub fn with_model(config: TrainConfig, model: Model<T>) -> Result<Self> {
        config.validate()?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7a1);
        let xe = config.dataset.sample_with(config.eval_samples, &mut eval_rng).cast::<T>();
        let input = ObjectiveInput::sample(config.objective, xe, config.epsilon, config.sigma, &mut eval_rng)?;
        let pool = match config.threads {
            1 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Argument(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Self {
            names: model.param_names(),
            optimizer: Optimizer::new(config.optimizer, config.lr, config.beta1, config.beta2),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iter: 0,
            counters: Counters::default(),
            last_depth: 0,
            eval: EvalSet {
                input,
                fisher_seed: config.seed ^ 0xf15e_b00c,
            },
            pool,
            model,
            config,
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epsilon(&self) -> f64 {
        self.config
            .eps_schedule
            .at(self.config.epsilon, self.iter, self.config.iterations)
    }

    /// Draw a batch, compute the objective gradient and apply one update.
    /// Returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let eps = self.epsilon();
        let x = self.config.dataset.sample_with(self.config.batch, &mut self.rng).cast::<T>();
        let input = ObjectiveInput::sample(self.config.objective, x, eps, self.config.sigma, &mut self.rng)?;
        let (loss, grads, counters, depth) = self.loss_and_grad(&input)?;
        self.counters = add_counters(self.counters, counters);
        self.last_depth = depth;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter: self.iter + 1,
                value: loss,
                epsilon: eps,
            });
        }
        let mut params = self.model.params_mut();
        self.optimizer.step(&mut params, &grads, &self.names)?;
        self.iter += 1;
        Ok(loss)
    }

    fn loss_and_grad(&self, input: &ObjectiveInput<T>) -> Result<(f64, Vec<Tensor<T>>, Counters, u32)> {
        let obj = self.config.objective;
        let Some(pool) = &self.pool else {
            let e = objectives::value_and_grad(obj, &self.model, input)?;
            return Ok((e.estimate.value, e.grads, e.total_counters, e.estimate.tape_depth));
        };
        let b = input.x.rows();
        let workers = pool.current_num_threads().clamp(1, b);
        let shards: Vec<ObjectiveInput<T>> = (0..workers)
            .map(|w| shard(input, w * b / workers, (w + 1) * b / workers))
            .collect::<Result<_>>()?;
        let model = &self.model;
        let parts: Vec<Result<(usize, objectives::Evaluation<T>)>> = pool.install(|| {
            shards
                .par_iter()
                .map(|s| Ok((s.x.rows(), objectives::value_and_grad(obj, model, s)?)))
                .collect()
        });
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor<T>>> = None;
        let mut counters = Counters::default();
        let mut depth = 0;
        for part in parts {
            let (rows, e) = part?;
            let w = rows as f64 / b as f64;
            loss += w * e.estimate.value;
            counters = add_counters(counters, e.total_counters);
            depth = depth.max(e.estimate.tape_depth);
            let scaled: Vec<Tensor<T>> = e.grads.iter().map(|g| g.scale(T::from_f64_lossy(w))).collect();
            grads = Some(match grads {
                None => scaled,
                Some(mut acc) => {
                    for (a, g) in acc.iter_mut().zip(&scaled) {
                        a.add_assign(g)?;
                    }
                    acc
                }
            });
        }
        Ok((loss, grads.expect("at least one shard"), counters, depth))
    }

    /// Metrics on the held-out set.
    pub fn evaluate(&self, status: &'static str, wall_ms_per_iter: f64) -> Result<LogRow> {
        let loss = objectives::value(self.config.objective, &self.model, &self.eval.input)?.value;
        let sm = objectives::value(Objective::Sm, &self.model, &ObjectiveInput::new(self.eval.input.x.clone()))?.value;
        let fisher = toy::fisher_divergence(
            &self.config.dataset,
            |x| Ok(self.model.score_values(&x.cast::<T>())?.cast::<f64>()),
            self.config.eval_samples,
            self.eval.fisher_seed,
        )?;
        Ok(LogRow {
            iter: self.iter,
            objective: self.config.objective,
            epsilon: self.epsilon(),
            loss,
            sm_exact: sm,
            fisher: fisher.value,
            fisher_se: fisher.std_error,
            counters: self.counters,
            tape_depth: self.last_depth,
            status,
            wall_ms_per_iter,
        })
    }

    /// Run to completion, handing each log row to `on_row`. On a non-finite
    /// loss a diagnostic row (status `nonfinite`) is emitted before the
    /// error is returned.
    pub fn run(&mut self, mut on_row: impl FnMut(&LogRow) -> Result<()>) -> Result<()> {
        on_row(&self.evaluate("ok", 0.0)?)?;
        let every = self.config.eval_every.max(1);
        let mut since = Instant::now();
        let mut steps_since = 0usize;
        while self.iter < self.config.iterations {
            match self.step() {
                Ok(_) => {}
                Err(Error::NonFiniteLoss { iter, value, epsilon }) => {
                    let row = LogRow {
                        iter,
                        objective: self.config.objective,
                        epsilon,
                        loss: value,
                        sm_exact: f64::NAN,
                        fisher: f64::NAN,
                        fisher_se: f64::NAN,
                        counters: self.counters,
                        tape_depth: self.last_depth,
                        status: "nonfinite",
                        wall_ms_per_iter: 0.0,
                    };
                    on_row(&row)?;
                    return Err(Error::NonFiniteLoss { iter, value, epsilon });
                }
                Err(e) => return Err(e),
            }
            steps_since += 1;
            if self.iter % every == 0 || self.iter == self.config.iterations {
                let ms = since.elapsed().as_secs_f64() * 1e3 / steps_since as f64;
                on_row(&self.evaluate("ok", ms)?)?;
                since = Instant::now();
                steps_since = 0;
            }
        }
        Ok(())
    }
}

fn add_counters(a: Counters, b: Counters) -> Counters {
    Counters {
        forward_evals: a.forward_evals + b.forward_evals,
        first_order_passes: a.first_order_passes + b.first_order_passes,
        nested_passes: a.nested_passes + b.nested_passes,
    }
}

fn shard<T: Scalar>(input: &ObjectiveInput<T>, lo: usize, hi: usize) -> Result<ObjectiveInput<T>> {
    let n = hi - lo;
    Ok(ObjectiveInput {
        x: input.x.slice_rows(lo, n)?,
        directions: match &input.directions {
            Some(d) => Some(objectives::DirectionSample::from_tensor(d.v.slice_rows(lo, n)?, d.epsilon)?),
            None => None,
        },
        noisy: match &input.noisy {
            Some(t) => Some(t.slice_rows(lo, n)?),
            None => None,
        },
        sigma: input.sigma,
    })
}

/// Result of [`train`].
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub log: Vec<LogRow>,
}

pub fn train<T: Scalar>(config: &TrainConfig) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::<T>::new(config.clone())?;
    let mut log = Vec::new();
    trainer.run(|row| {
        log.push(row.clone());
        Ok(())
    })?;
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
    })
}

/// Resolve the worker count from `FDSM_THREADS` (unset means 1, 0 means auto).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("FDSM_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("FDSM_THREADS must be an integer, got `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_definition() {
        let mut p = Tensor::<f64>::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![0.5, 0.0]);
        Optimizer::sgd(0.1).step(&mut [&mut p], &[g], &["w".into()]).unwrap();
        assert_eq!(p.data(), &[0.95, 2.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut p = Tensor::<f64>::vector(vec![0.0, 0.0]);
        let g = Tensor::vector(vec![3.0, -0.01]);
        Optimizer::adam(1e-3).step(&mut [&mut p], &[g], &["w".into()]).unwrap();
        assert!((p.data()[0] + 1e-3).abs() < 1e-9);
        assert!((p.data()[1] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = Tensor::<f64>::vector(vec![0.0]);
        let g = Tensor::vector(vec![f64::NAN]);
        let err = Optimizer::adam(1e-3)
            .step(&mut [&mut p], &[g], &["layer2.bias".into()])
            .unwrap_err();
        assert!(err.to_string().contains("layer2.bias"));
        assert_eq!(p.data(), &[0.0]);
    }

    #[test]
    fn config_text_round_trip() {
        let mut c = TrainConfig::default();
        c.apply_text("objective = ssm\n# comment\nlr = 0.01\neps_decay = linear:0.01\nhidden = 8,8\n")
            .unwrap();
        assert_eq!(c.objective, Objective::Ssm);
        assert_eq!(c.hidden, vec![8, 8]);
        let mut d = TrainConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        let err = c.apply_text("lr 0.1").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        assert!(c.set("nope", "1").unwrap_err().to_string().contains("eval_every"));
    }

    #[test]
    fn linear_schedule_hits_floor() {
        let s: EpsilonSchedule = "linear:0.01".parse().unwrap();
        assert_eq!(s.at(0.1, 0, 10), 0.1);
        assert!((s.at(0.1, 10, 10) - 0.01).abs() < 1e-15);
    }
}
