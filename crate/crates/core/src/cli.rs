//! Command-line front end. Every subcommand writes a manifest first, then
//! CSV files into the output directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{exact_directional_derivative, Tape, Var};
use crate::bench::{self, BenchOptions};
use crate::error::{Error, Result};
use crate::langevin::{self, AnnealSchedule};
use crate::models::{Model, QuadraticEnergyModel};
use crate::objectives::{self, DirectionSample, Objective, ObjectiveInput};
use crate::stencil::{fd_directional, format_rational, Stencil, SymmetricStencil};
use crate::tensor::{Scalar, Tensor};
use crate::toy::{self, ToyDensity};
use crate::train::{TrainConfig, Trainer, LOG_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "fdsm", version, about = "Finite-difference score matching toolkit")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for training and sampling (0 = one per core).
    #[arg(long, global = true, env = "FDSM_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print stencil offsets and coefficients.
    Stencil {
        #[arg(long)]
        order: usize,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Compare finite-difference and exact directional derivatives over a grid of epsilons.
    Approx {
        #[arg(long, value_enum)]
        function: TestFunction,
        #[arg(long)]
        order: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125")]
        eps_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "64,64")]
        hidden: Vec<usize>,
    },
    /// Train a model on a toy density.
    Train(TrainArgs),
    /// Exact score-matching loss and Fisher divergence of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_dataset)]
        dataset: ToyDensity,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Annealed Langevin samples from a checkpoint.
    Sample(SampleArgs),
    /// Timing and counter benchmarks.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Angle between parameter gradients of two objectives.
    GradAngle {
        #[arg(long, value_parser = parse_objective)]
        objective_a: Objective,
        #[arg(long, value_parser = parse_objective)]
        objective_b: Objective,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125")]
        eps_grid: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, value_delimiter = ',', default_value = "64,64")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Number of random models (seeds `seed..seed+seeds`).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestFunction {
    Mlp,
    Quadratic,
    Logsumexp,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    /// `constant` or `linear:<min>`.
    #[arg(long)]
    pub eps_decay: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub eval_every: Option<String>,
    #[arg(long)]
    pub eval_samples: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let pairs: [(&'static str, &Option<String>); 15] = [
            ("objective", &self.objective),
            ("dataset", &self.dataset),
            ("model", &self.model),
            ("hidden", &self.hidden),
            ("batch", &self.batch),
            ("iterations", &self.iterations),
            ("optimizer", &self.optimizer),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("epsilon", &self.epsilon),
            ("eps_decay", &self.eps_decay),
            ("sigma", &self.sigma),
            ("eval_every", &self.eval_every),
            ("eval_samples", &self.eval_samples),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(short = 'n', long = "n", default_value_t = 1000)]
    pub n: usize,
    /// Dataset whose bounding box seeds the chains.
    #[arg(long, value_parser = parse_dataset, default_value = "mog8")]
    pub dataset: ToyDensity,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_first: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma_last: f64,
    #[arg(long, default_value_t = 10)]
    pub levels: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub base_step: f64,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Cost of order-T directional derivatives, nested vs finite difference.
    OrderSweep {
        #[arg(long, default_value_t = 6)]
        t_max: usize,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, value_delimiter = ',', default_value = "256,256,256")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 5)]
        warmups: usize,
    },
    /// Per-iteration time of loss plus parameter gradient.
    Objective {
        #[arg(long, value_delimiter = ',', value_parser = parse_objective, default_value = "ssm,fd-ssm,dsm-sliced,fd-dsm")]
        objectives: Vec<Objective>,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, value_delimiter = ',', default_value = "256,256,256")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 5)]
        warmups: usize,
    },
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_dataset(s: &str) -> std::result::Result<ToyDensity, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse `args` (including the program name) and run. Returns the exit code:
/// 0 success, 1 usage error, 2 runtime failure.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Error::Argument(msg)) | Err(Error::Config { msg, .. }) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e @ Error::UnknownToken { .. }) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match cli.precision {
        Precision::F64 => dispatch_typed::<f64>(cli),
        Precision::F32 => dispatch_typed::<f32>(cli),
    }
}

fn dispatch_typed<T: Scalar>(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out)?;
    let out = Output::new(&cli.out);
    match &cli.command {
        Command::Stencil { order, alphas } => {
            out.manifest(cli, "stencil", &[("order", order.to_string()), ("alphas", fmt_list(alphas.as_deref().unwrap_or(&[])))])?;
            cmd_stencil(&out, *order, alphas.as_deref())
        }
        Command::Approx {
            function,
            order,
            eps_grid,
            hidden,
        } => {
            out.manifest(
                cli,
                "approx",
                &[
                    ("function", format!("{function:?}").to_lowercase()),
                    ("order", order.to_string()),
                    ("eps_grid", fmt_list(eps_grid)),
                    ("hidden", fmt_list(hidden)),
                ],
            )?;
            cmd_approx::<T>(&out, cli.seed, *function, *order, eps_grid, hidden)
        }
        Command::Train(args) => {
            let mut config = match &args.config {
                Some(p) => TrainConfig::from_file(p)?,
                None => TrainConfig::default(),
            };
            for (k, v) in args.overrides() {
                config.set(k, v)?;
            }
            config.seed = cli.seed;
            config.threads = cli.threads;
            config.validate()?;
            let text = config.to_text();
            let resolved: Vec<(&str, String)> = text
                .lines()
                .filter_map(|l| l.split_once(" = "))
                .filter(|(k, _)| !matches!(*k, "seed" | "threads"))
                .map(|(k, v)| (k, v.to_string()))
                .collect();
            out.manifest(cli, "train", &resolved)?;
            cmd_train::<T>(&out, config)
        }
        Command::Eval {
            checkpoint,
            dataset,
            samples,
        } => {
            out.manifest(
                cli,
                "eval",
                &[
                    ("checkpoint", checkpoint.display().to_string()),
                    ("dataset", dataset.to_string()),
                    ("samples", samples.to_string()),
                ],
            )?;
            cmd_eval::<T>(&out, cli.seed, checkpoint, dataset, *samples)
        }
        Command::Sample(args) => {
            out.manifest(
                cli,
                "sample",
                &[
                    ("checkpoint", args.checkpoint.display().to_string()),
                    ("n", args.n.to_string()),
                    ("dataset", args.dataset.to_string()),
                    ("sigma_first", args.sigma_first.to_string()),
                    ("sigma_last", args.sigma_last.to_string()),
                    ("levels", args.levels.to_string()),
                    ("steps", args.steps.to_string()),
                    ("base_step", args.base_step.to_string()),
                ],
            )?;
            cmd_sample::<T>(&out, cli.seed, cli.threads, args)
        }
        Command::Bench { which } => match which {
            BenchCommand::OrderSweep {
                t_max,
                epsilon,
                hidden,
                repeats,
                warmups,
            } => {
                out.manifest(
                    cli,
                    "bench order-sweep",
                    &[
                        ("t_max", t_max.to_string()),
                        ("epsilon", epsilon.to_string()),
                        ("hidden", fmt_list(hidden)),
                        ("repeats", repeats.to_string()),
                        ("warmups", warmups.to_string()),
                    ],
                )?;
                let opts = BenchOptions {
                    repeats: *repeats,
                    warmups: *warmups,
                };
                cmd_bench_order::<T>(&out, cli.seed, *t_max, *epsilon, hidden, opts)
            }
            BenchCommand::Objective {
                objectives,
                batch,
                hidden,
                epsilon,
                sigma,
                repeats,
                warmups,
            } => {
                let names: Vec<&str> = objectives.iter().map(|o| o.token()).collect();
                out.manifest(
                    cli,
                    "bench objective",
                    &[
                        ("objectives", names.join(",")),
                        ("batch", batch.to_string()),
                        ("hidden", fmt_list(hidden)),
                        ("epsilon", epsilon.to_string()),
                        ("sigma", sigma.to_string()),
                        ("repeats", repeats.to_string()),
                        ("warmups", warmups.to_string()),
                    ],
                )?;
                let opts = BenchOptions {
                    repeats: *repeats,
                    warmups: *warmups,
                };
                cmd_bench_objective::<T>(&out, cli.seed, objectives, *batch, hidden, *epsilon, *sigma, opts)
            }
        },
        Command::GradAngle {
            objective_a,
            objective_b,
            eps_grid,
            batch,
            hidden,
            sigma,
            seeds,
        } => {
            out.manifest(
                cli,
                "grad-angle",
                &[
                    ("objective_a", objective_a.to_string()),
                    ("objective_b", objective_b.to_string()),
                    ("eps_grid", fmt_list(eps_grid)),
                    ("batch", batch.to_string()),
                    ("hidden", fmt_list(hidden)),
                    ("sigma", sigma.to_string()),
                    ("seeds", seeds.to_string()),
                ],
            )?;
            cmd_grad_angle::<T>(&out, cli.seed, *objective_a, *objective_b, eps_grid, *batch, hidden, *sigma, *seeds)
        }
    }
}

fn fmt_list<D: std::fmt::Display>(xs: &[D]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Output directory helper; CSV files start with a comment naming the manifest.
struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    fn manifest(&self, cli: &Cli, subcommand: &str, config: &[(&str, String)]) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand = {subcommand}");
        let _ = writeln!(s, "seed = {}", cli.seed);
        let _ = writeln!(s, "precision = {}", match cli.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        });
        let _ = writeln!(s, "threads = {}", cli.threads);
        let _ = writeln!(s, "build = {}", build_id());
        let _ = writeln!(s, "out = {}", cli.out.display());
        for (k, v) in config {
            let _ = writeln!(s, "{k} = {v}");
        }
        fs::write(self.dir.join(MANIFEST_FILE), s)?;
        Ok(())
    }

    fn csv(&self, name: &str, header: &str) -> Result<BufWriter<File>> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        writeln!(w, "# manifest: {MANIFEST_FILE}")?;
        writeln!(w, "{header}")?;
        Ok(w)
    }
}

pub fn build_id() -> String {
    format!(
        "fdsm-{}{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("FDSM_BUILD_ID").map(|s| format!("+{s}")).unwrap_or_default()
    )
}

pub const STENCIL_HEADER: &str = "T,K,alpha,beta";

fn cmd_stencil(out: &Output, order: usize, alphas: Option<&[f64]>) -> Result<()> {
    let s = match alphas {
        Some(a) => SymmetricStencil::solve(order, a)?,
        None => SymmetricStencil::with_default_alphas(order)?,
    };
    if let Some(w) = s.condition_warning() {
        eprintln!("warning: {w}");
    }
    let mut w = out.csv("stencil.csv", STENCIL_HEADER)?;
    println!("{STENCIL_HEADER}");
    let betas: Vec<String> = match s.exact_betas() {
        Some(ex) => ex.iter().map(format_rational).collect(),
        None => s.betas().iter().map(|b| b.to_string()).collect(),
    };
    for (a, b) in s.alphas().iter().zip(&betas) {
        let row = format!("{},{},{},{}", order, s.half_width_k(), a, b);
        println!("{row}");
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

pub const APPROX_HEADER: &str = "function,T,eps,fd,exact,abs_err,rel_err,fwd_evals";

fn logsumexp_tape<'t, T: Scalar>(_: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(x.exp().sum().ln())
}

fn cmd_approx<T: Scalar>(
    out: &Output,
    seed: u64,
    function: TestFunction,
    order: usize,
    eps_grid: &[f64],
    hidden: &[usize],
) -> Result<()> {
    let x = Tensor::<T>::from_f64(&[2], &[0.3, -0.2])?;
    let dir = [0.6, 0.8];
    let model: Option<Model<T>> = match function {
        TestFunction::Mlp => Some(Model::energy_mlp(2, hidden, seed)?),
        TestFunction::Quadratic => Some(Model::Quadratic(QuadraticEnergyModel::standard(2))),
        TestFunction::Logsumexp => None,
    };
    let stencil = Stencil::from(SymmetricStencil::with_default_alphas(order)?);
    let mut w = out.csv("approx.csv", APPROX_HEADER)?;
    let name = format!("{function:?}").to_lowercase();
    for &eps in eps_grid {
        let v = Tensor::<T>::from_f64(&[2], &[dir[0] * eps, dir[1] * eps])?;
        let (fd, exact) = match &model {
            Some(m) => (
                fd_directional(|b: &Tensor<T>| m.energy_values(b), &x, &v, &stencil)?,
                bench::exact_model_directional(m, &x, &v, order)?.value,
            ),
            None => (
                fd_directional(
                    |b: &Tensor<T>| {
                        let rows: Vec<T> = (0..b.rows())
                            .map(|i| {
                                let r = b.row(i);
                                let m = r.iter().copied().fold(T::neg_infinity(), T::max);
                                m + r.iter().map(|&a| (a - m).exp()).sum::<T>().ln()
                            })
                            .collect();
                        Ok(Tensor::vector(rows))
                    },
                    &x,
                    &v,
                    &stencil,
                )?,
                exact_directional_derivative(logsumexp_tape, &x, &v, order)?.value,
            ),
        };
        if let Some(msg) = &fd.precision_warning {
            eprintln!("warning: {msg}");
        }
        let abs = (fd.value - exact).abs();
        let rel = if exact != 0.0 { format!("{:e}", abs / exact.abs()) } else { String::new() };
        writeln!(
            w,
            "{name},{order},{eps},{:e},{:e},{:e},{rel},{}",
            fd.value, exact, abs, fd.evaluations
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train<T: Scalar>(out: &Output, config: TrainConfig) -> Result<()> {
    fs::write(out.dir.join("config.txt"), config.to_text())?;
    let mut w = out.csv("train_log.csv", LOG_HEADER)?;
    let mut trainer = Trainer::<T>::new(config)?;
    let result = trainer.run(|row| {
        writeln!(w, "{}", row.to_csv())?;
        w.flush()?;
        Ok(())
    });
    let mut ckpt = BufWriter::new(File::create(out.dir.join("model.ckpt"))?);
    trainer.model().save(&mut ckpt)?;
    ckpt.flush()?;
    result
}

pub const EVAL_HEADER: &str = "dataset,samples,sm_exact,fisher,fisher_se";

fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    Model::load(std::io::BufReader::new(File::open(path)?))
}

fn cmd_eval<T: Scalar>(out: &Output, seed: u64, checkpoint: &Path, dataset: &ToyDensity, samples: usize) -> Result<()> {
    let model = load_checkpoint::<T>(checkpoint)?;
    if model.dim() != toy::DIM {
        return Err(Error::Argument(format!("checkpoint dimension {} is not 2", model.dim())));
    }
    let x = dataset.sample(samples, seed).cast::<T>();
    let sm = objectives::value(Objective::Sm, &model, &ObjectiveInput::new(x))?.value;
    let fisher = toy::fisher_divergence(
        dataset,
        |x| Ok(model.score_values(&x.cast::<T>())?.cast::<f64>()),
        samples,
        seed.wrapping_add(1),
    )?;
    let mut w = out.csv("eval.csv", EVAL_HEADER)?;
    writeln!(w, "{dataset},{samples},{},{},{}", sm, fisher.value, fisher.std_error)?;
    w.flush()?;
    Ok(())
}

fn cmd_sample<T: Scalar>(out: &Output, seed: u64, threads: usize, args: &SampleArgs) -> Result<()> {
    let model = load_checkpoint::<T>(&args.checkpoint)?;
    let schedule = AnnealSchedule::geometric(args.sigma_first, args.sigma_last, args.levels, args.steps, args.base_step)?;
    let xs = langevin::sample_model(&model, args.n, &schedule, args.dataset.half_extent(), seed, threads)?;
    let header: Vec<String> = (0..model.dim()).map(|j| format!("x{j}")).collect();
    let mut w = out.csv("samples.csv", &header.join(","))?;
    for i in 0..xs.rows() {
        writeln!(w, "{}", fmt_list(xs.row(i)))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bench_order<T: Scalar>(
    out: &Output,
    seed: u64,
    t_max: usize,
    epsilon: f64,
    hidden: &[usize],
    opts: BenchOptions,
) -> Result<()> {
    let model = Model::<T>::energy_mlp(2, hidden, seed)?;
    let x = Tensor::<T>::from_f64(&[2], &[0.3, -0.2])?;
    let v = Tensor::<T>::from_f64(&[2], &[0.6 * epsilon, 0.8 * epsilon])?;
    let recs = bench::bench_order_sweep(&model, &x, &v, t_max, opts)?;
    let mut w = out.csv("bench_order.csv", bench::CSV_HEADER)?;
    for r in &recs {
        writeln!(w, "{}", r.to_csv())?;
    }
    w.flush()?;
    // Column layout for gnuplot: one line per order.
    let mut g = BufWriter::new(File::create(out.dir.join("bench_order.dat"))?);
    writeln!(g, "# manifest: {MANIFEST_FILE}")?;
    writeln!(g, "# T exact_ms fd_ms fd_parallel_ms exact_bytes fd_bytes fd_rel_err")?;
    for t in 1..=t_max {
        let pick = |m: bench::BenchMethod| recs.iter().find(|r| r.method == m && r.order == Some(t));
        let (e, f, p) = (
            pick(bench::BenchMethod::ExactNested),
            pick(bench::BenchMethod::Fd),
            pick(bench::BenchMethod::FdParallel),
        );
        if let (Some(e), Some(f), Some(p)) = (e, f, p) {
            writeln!(
                g,
                "{t} {:.4} {:.4} {:.4} {} {} {:e}",
                e.wall_ms,
                f.wall_ms,
                p.wall_ms,
                e.peak_bytes,
                f.peak_bytes,
                f.rel_err.unwrap_or(f64::NAN)
            )?;
        }
    }
    g.flush()?;
    Ok(())
}

pub const RATIO_HEADER: &str = "numerator,denominator,ratio,threshold,kind,pass";

#[allow(clippy::too_many_arguments)]
fn cmd_bench_objective<T: Scalar>(
    out: &Output,
    seed: u64,
    objectives: &[Objective],
    batch: usize,
    hidden: &[usize],
    epsilon: f64,
    sigma: f64,
    opts: BenchOptions,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = ToyDensity::mog8().sample_with(batch, &mut rng).cast::<T>();
    let inputs = objectives
        .iter()
        .map(|&o| ObjectiveInput::sample(o, x.clone(), epsilon, sigma, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut models = Vec::new();
    for &o in objectives {
        models.push(if o.needs_energy() || !matches!(o, Objective::Ssmvr | Objective::FdSsmvr) {
            Model::<T>::energy_mlp(2, hidden, seed)?
        } else {
            Model::<T>::score_mlp(2, hidden, seed)?
        });
    }
    let mut recs = Vec::new();
    for ((&o, input), model) in objectives.iter().zip(&inputs).zip(&models) {
        recs.push(bench::bench_objective(model, o, input, opts)?);
    }
    let mut w = out.csv("bench_objective.csv", bench::CSV_HEADER)?;
    for r in &recs {
        writeln!(w, "{}", r.to_csv())?;
    }
    w.flush()?;
    let mut rw = out.csv("bench_ratios.csv", RATIO_HEADER)?;
    for (fd, base, threshold) in [
        (Objective::FdSsm, Objective::Ssm, 0.67),
        (Objective::FdDsm, Objective::DsmSliced, 0.9),
        (Objective::FdSsmvr, Objective::Ssmvr, 1.0),
    ] {
        let find = |o: Objective| recs.iter().find(|r| r.method == bench::BenchMethod::Objective(o));
        if let (Some(a), Some(b)) = (find(fd), find(base)) {
            let ratio = a.wall_ms / b.wall_ms;
            writeln!(rw, "{fd},{base},{ratio:.4},{threshold},soft,{}", ratio <= threshold)?;
        }
    }
    rw.flush()?;
    Ok(())
}

pub const ANGLE_HEADER: &str = "eps,seed,angle_deg";
pub const ANGLE_SUMMARY_HEADER: &str = "eps,median_deg,max_deg";

#[allow(clippy::too_many_arguments)]
fn cmd_grad_angle<T: Scalar>(
    out: &Output,
    seed: u64,
    a: Objective,
    b: Objective,
    eps_grid: &[f64],
    batch: usize,
    hidden: &[usize],
    sigma: f64,
    seeds: u64,
) -> Result<()> {
    let score_model = !(a.needs_energy() || b.needs_energy())
        && matches!(a, Objective::Ssmvr | Objective::FdSsmvr)
        && matches!(b, Objective::Ssmvr | Objective::FdSsmvr);
    let mut w = out.csv("grad_angle.csv", ANGLE_HEADER)?;
    let mut sw = out.csv("grad_angle_summary.csv", ANGLE_SUMMARY_HEADER)?;
    for &eps in eps_grid {
        let mut angles = Vec::new();
        for s in seed..seed + seeds.max(1) {
            let model = if score_model {
                Model::<T>::score_mlp(2, hidden, s)?
            } else {
                Model::<T>::energy_mlp(2, hidden, s)?
            };
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = ToyDensity::mog8().sample_with(batch, &mut rng).cast::<T>();
            // Both objectives see the same directions and noise.
            let dirs = DirectionSample::sample(batch, 2, eps, &mut rng)?;
            let noisy = objectives::perturb(&x, sigma, &mut rng)?;
            let input = ObjectiveInput::new(x).with_directions(dirs).with_noise(noisy, sigma);
            let angle = objectives::grad_angle(a, b, &model, &input)?;
            writeln!(w, "{eps},{s},{angle}")?;
            angles.push(angle);
        }
        let max = angles.iter().copied().fold(0.0, f64::max);
        writeln!(sw, "{eps},{},{max}", bench::median(&mut angles))?;
    }
    w.flush()?;
    sw.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["fdsm", "frobnicate"]), 1);
        assert_eq!(run(["fdsm", "stencil"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["fdsm", "--help"]), 0);
    }
}
