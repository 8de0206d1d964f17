use fdsm::bench::{bench_order_sweep, BenchOptions};
use fdsm::langevin::{langevin, sample_model, AnnealSchedule};
use fdsm::models::{Mlp, Model, QuadraticEnergyModel};
use fdsm::objectives::{self, DirectionSample, Objective, ObjectiveInput};
use fdsm::toy::{self, ToyDensity};
use fdsm::train::{train, TrainConfig, Trainer};
use fdsm::{Error, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    TrainConfig {
        dataset: ToyDensity::gauss2(),
        hidden: vec![16, 16],
        batch: 32,
        iterations: 30,
        eval_every: 10,
        eval_samples: 256,
        seed: 42,
        ..TrainConfig::default()
    }
}

fn column_moments(xs: &Tensor<f64>) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = xs.rows() as f64;
    let mut m = [0.0; 2];
    for i in 0..xs.rows() {
        for j in 0..2 {
            m[j] += xs.row(i)[j] / n;
        }
    }
    let mut c = [[0.0; 2]; 2];
    for i in 0..xs.rows() {
        let r = xs.row(i);
        for a in 0..2 {
            for b in 0..2 {
                c[a][b] += (r[a] - m[a]) * (r[b] - m[b]) / (n - 1.0);
            }
        }
    }
    (m, c)
}

#[test]
fn training_is_bit_reproducible() {
    for objective in [Objective::FdSsm, Objective::Ssm, Objective::FdDsm, Objective::FdSsmvr] {
        let config = TrainConfig {
            objective,
            ..small_config()
        };
        let a = train::<f64>(&config).unwrap();
        let b = train::<f64>(&config).unwrap();
        let fields = |log: &[fdsm::train::LogRow]| log.iter().map(|r| r.deterministic_fields()).collect::<Vec<_>>();
        assert_eq!(fields(&a.log), fields(&b.log), "{objective}");
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.model.save(&mut ca).unwrap();
        b.model.save(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }
}

#[test]
fn zero_iterations_log_only_the_initial_row() {
    let config = TrainConfig {
        iterations: 0,
        ..small_config()
    };
    let out = train::<f64>(&config).unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.log[0].iter, 0);
    assert_eq!(out.model, config.init_model::<f64>().unwrap());
}

#[test]
fn nan_loss_aborts_with_diagnostic_row() {
    let config = small_config();
    let mut model = config.init_model::<f64>().unwrap();
    model.params_mut()[1].data_mut()[0] = f64::NAN;
    let mut trainer = Trainer::with_model(config, model).unwrap();
    let mut rows = Vec::new();
    let err = trainer
        .run(|r| {
            rows.push(r.clone());
            Ok(())
        })
        .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { iter: 1, .. }), "{err}");
    let last = rows.last().unwrap();
    assert_eq!(last.status, "nonfinite");
    assert_eq!(last.iter, 1);
    assert_eq!(last.epsilon, 0.1);
}

#[test]
fn threaded_training_matches_its_own_rerun() {
    let config = TrainConfig {
        threads: 2,
        ..small_config()
    };
    let a = train::<f64>(&config).unwrap();
    let b = train::<f64>(&config).unwrap();
    assert_eq!(a.model, b.model);
}

#[test]
fn fd_ssm_fits_the_gaussian() {
    let config = TrainConfig {
        dataset: ToyDensity::gauss2(),
        iterations: 2000,
        eval_every: 2000,
        eval_samples: 10_000,
        epsilon: 0.1,
        ..TrainConfig::default()
    };
    let out = train::<f64>(&config).unwrap();
    let last = out.log.last().unwrap();
    assert!(last.fisher < 0.05, "fisher {}", last.fisher);
}

#[test]
fn f32_training_runs() {
    let out = train::<f32>(&small_config()).unwrap();
    assert!(out.log.iter().all(|r| r.fisher.is_finite()));
}

#[test]
fn langevin_on_standard_gaussian() {
    let model = Model::Quadratic(QuadraticEnergyModel::<f64>::standard(2));
    let schedule = AnnealSchedule::constant(0.05, 600).unwrap();
    let n = 10_000;
    let xs = sample_model(&model, n, &schedule, 3.0, 1, 1).unwrap();
    let (m, c) = column_moments(&xs);
    for j in 0..2 {
        assert!(m[j].abs() <= 3.0 * (c[j][j] / n as f64).sqrt(), "mean {m:?}");
        assert!((c[j][j] - 1.0).abs() <= 0.1, "cov {c:?}");
    }
    assert!(c[0][1].abs() <= 0.1);
    let again = sample_model(&model, n, &schedule, 3.0, 1, 1).unwrap();
    assert_eq!(xs, again);
}

#[test]
fn default_schedule_with_gentle_score_stays_bounded() {
    let xs = langevin(|x| Ok(x.map(|v| -0.01 * v)), 2, 16, &AnnealSchedule::default(), 2.0, 3, 1).unwrap();
    assert!(xs.data().iter().all(|v| v.is_finite()));
}

#[test]
fn toy_samplers() {
    let g = ToyDensity::gauss2().sample(100_000, 1);
    let (m, _) = column_moments(&g);
    assert!(m[0].abs() < 0.02 && m[1].abs() < 0.02);

    let mog = ToyDensity::mog8();
    let xs = mog.sample(1000, 2);
    for i in 0..xs.rows() {
        let r = xs.row(i);
        let near = (0..8).any(|k| {
            let a = std::f64::consts::TAU * k as f64 / 8.0;
            ((r[0] - 2.0 * a.cos()).powi(2) + (r[1] - 2.0 * a.sin()).powi(2)).sqrt() <= 0.4
        });
        assert!(near, "sample {r:?} far from every mode");
    }
    assert_eq!(mog.sample(50, 9), mog.sample(50, 9));

    // Midpoint between modes 0 and 1: no component across the symmetry axis.
    let a = std::f64::consts::TAU / 16.0;
    let s = mog.true_score(&[1.5 * a.cos(), 1.5 * a.sin()]);
    let across = s[0] * (-a.sin()) + s[1] * a.cos();
    assert!(across.abs() < 1e-10);
}

#[test]
fn fisher_examples() {
    for d in [ToyDensity::gauss2(), ToyDensity::mog8(), ToyDensity::rings(), ToyDensity::checker()] {
        let exact = toy::fisher_divergence(&d, |x| Ok(d.true_score_batch(x)), 2000, 3).unwrap();
        assert!(exact.value.abs() <= 1e-12, "{d}");
    }
    let zero = toy::fisher_divergence(&ToyDensity::gauss2(), |x| Ok(x.map(|_| 0.0)), 100_000, 4).unwrap();
    assert!((zero.value - 1.0).abs() <= 3.0 * zero.std_error, "{zero:?}");
}

#[test]
fn direction_moments() {
    let (eps, n) = (0.2, 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = DirectionSample::<f64>::sample(n, 2, eps, &mut rng).unwrap();
    let (m, c) = column_moments(&d.v);
    let target = eps * eps / 2.0;
    for j in 0..2 {
        assert!(m[j].abs() <= 3.0 * (c[j][j] / n as f64).sqrt());
        assert!((c[j][j] - target).abs() <= 0.05 * target);
    }
    assert!(c[0][1].abs() <= 0.05 * target);
    assert!(DirectionSample::<f64>::sample(3, 2, 0.0, &mut rng).is_err());
}

#[test]
fn dsm_identities() {
    // Zero score: expected loss 1/sigma^2.
    let zero = Model::Score(Mlp::from_layers(vec![Tensor::zeros(&[2, 2])], vec![Tensor::zeros(&[2])]).unwrap());
    let sigma = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = ToyDensity::gauss2().sample_with(50_000, &mut rng);
    let noisy = objectives::perturb(&x, sigma, &mut rng).unwrap();
    let input = ObjectiveInput::new(x.clone()).with_noise(noisy.clone(), sigma);
    let v = objectives::value(Objective::Dsm, &zero, &input).unwrap().value;
    assert!((v - 1.0 / (sigma * sigma)).abs() < 0.05 * 4.0, "{v}");

    // Sliced DSM averages to DSM over directions.
    let model = Model::<f64>::energy_mlp(2, &[16, 16], 3).unwrap();
    let dsm = objectives::value(Objective::Dsm, &model, &input).unwrap().value;
    let dirs = DirectionSample::sample(x.rows(), 2, 0.1, &mut rng).unwrap();
    let sliced = objectives::value(Objective::DsmSliced, &model, &input.clone().with_directions(dirs)).unwrap().value;
    assert!((sliced - dsm).abs() < 0.02 * dsm.abs(), "{sliced} vs {dsm}");
}

fn slope(eps: &[f64], errs: &[f64]) -> f64 {
    let n = eps.len() as f64;
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    num / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>()
}

#[test]
fn fd_objectives_converge_at_second_order() {
    let eps_grid = [0.1, 0.05, 0.025, 0.0125];
    let energy = Model::<f64>::energy_mlp(2, &[32, 32], 8).unwrap();
    let score = Model::<f64>::score_mlp(2, &[32, 32], 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = ToyDensity::mog8().sample_with(64, &mut rng);
    let unit = DirectionSample::sample(64, 2, 1.0, &mut rng).unwrap();
    let noisy = objectives::perturb(&x, 0.1, &mut rng).unwrap();
    for (fd, exact, model) in [
        (Objective::FdSsm, Objective::Ssm, &energy),
        (Objective::FdDsm, Objective::DsmSliced, &energy),
        (Objective::FdSsmvr, Objective::Ssmvr, &score),
    ] {
        let errs: Vec<f64> = eps_grid
            .iter()
            .map(|&e| {
                let input = ObjectiveInput::new(x.clone())
                    .with_directions(unit.scaled(e))
                    .with_noise(noisy.clone(), 0.1);
                let a = objectives::value(fd, model, &input).unwrap().value;
                let b = objectives::value(exact, model, &input).unwrap().value;
                (a - b).abs()
            })
            .collect();
        let s = slope(&eps_grid, &errs);
        assert!((1.8..=2.2).contains(&s), "{fd}: slope {s}, errors {errs:?}");
    }
}

#[test]
fn mpf_on_constant_energy_is_zero_and_approaches_ssm_on_gaussian() {
    let constant = Model::Energy(
        Mlp::from_layers(
            vec![Tensor::zeros(&[2, 4]), Tensor::zeros(&[4, 1])],
            vec![Tensor::zeros(&[4]), Tensor::vector(vec![3.0])],
        )
        .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = ToyDensity::gauss2().sample_with(32, &mut rng);
    let unit = DirectionSample::sample(32, 2, 1.0, &mut rng).unwrap();
    let input = ObjectiveInput::new(x.clone()).with_directions(unit.scaled(0.1));
    assert_eq!(objectives::value(Objective::MpfNaive, &constant, &input).unwrap().value, 0.0);

    let gauss = Model::Quadratic(QuadraticEnergyModel::<f64>::standard(2));
    let xx = Tensor::concat_rows(&[&x, &x]).unwrap();
    let gaps: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&e| {
            let input = ObjectiveInput::new(xx.clone()).with_directions(unit.scaled(e).antithetic());
            let r = objectives::value(Objective::MpfNaive, &gauss, &input).unwrap().value;
            let j = objectives::value(Objective::Ssm, &gauss, &input).unwrap().value;
            (r - j).abs()
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn grad_angle_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = ToyDensity::gauss2().sample_with(32, &mut rng);
    let input = ObjectiveInput::new(x).with_directions(DirectionSample::sample(32, 2, 0.1, &mut rng).unwrap());
    let mlp = Model::<f64>::energy_mlp(2, &[16], 1).unwrap();
    assert_eq!(objectives::grad_angle(Objective::Ssm, Objective::Ssm, &mlp, &input).unwrap(), 0.0);
    let quad = Model::Quadratic(QuadraticEnergyModel {
        mean: Tensor::vector(vec![0.3, -0.1]),
        precision: Tensor::vector(vec![1.7]),
    });
    let a = objectives::grad_angle(Objective::FdSsm, Objective::Ssm, &quad, &input).unwrap();
    assert!(a < 1e-5, "{a}");
}

#[test]
fn bench_counters_repeat_exactly() {
    let m = Model::<f64>::energy_mlp(2, &[16, 16], 2).unwrap();
    let x = Tensor::vector(vec![0.1, 0.2]);
    let v = Tensor::vector(vec![0.06, 0.08]);
    let opts = BenchOptions { repeats: 2, warmups: 0 };
    let a = bench_order_sweep(&m, &x, &v, 4, opts).unwrap();
    let b = bench_order_sweep(&m, &x, &v, 4, opts).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(
            (ra.forward_evals, ra.derivative_passes, ra.peak_bytes),
            (rb.forward_evals, rb.derivative_passes, rb.peak_bytes)
        );
    }
}
