//! Score-matching objectives, gradient-based and finite-difference.
//!
//! Every objective produces a per-sample loss vector on a tape; the batch
//! loss is its mean. Random inputs (projection directions, noisy copies of
//! the data) are drawn up front and passed in, so evaluation is pure.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Counters, GradMode, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::models::{Bound, Model, ModelKind};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Sm,
    Dsm,
    DsmSliced,
    Ssm,
    Ssmvr,
    FdSsm,
    FdDsm,
    FdSsmvr,
    MpfNaive,
}

impl Objective {
    pub const ALL: [Objective; 9] = [
        Objective::Sm,
        Objective::Dsm,
        Objective::DsmSliced,
        Objective::Ssm,
        Objective::Ssmvr,
        Objective::FdSsm,
        Objective::FdDsm,
        Objective::FdSsmvr,
        Objective::MpfNaive,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Objective::Sm => "sm",
            Objective::Dsm => "dsm",
            Objective::DsmSliced => "dsm-sliced",
            Objective::Ssm => "ssm",
            Objective::Ssmvr => "ssmvr",
            Objective::FdSsm => "fd-ssm",
            Objective::FdDsm => "fd-dsm",
            Objective::FdSsmvr => "fd-ssmvr",
            Objective::MpfNaive => "mpf-naive",
        }
    }

    pub fn is_finite_difference(self) -> bool {
        matches!(
            self,
            Objective::FdSsm | Objective::FdDsm | Objective::FdSsmvr | Objective::MpfNaive
        )
    }

    /// Objectives that read the log-density itself, not just the score.
    pub fn needs_energy(self) -> bool {
        matches!(self, Objective::FdSsm | Objective::FdDsm | Objective::MpfNaive)
    }

    pub fn needs_directions(self) -> bool {
        !matches!(self, Objective::Sm | Objective::Dsm)
    }

    pub fn needs_noise(self) -> bool {
        matches!(self, Objective::Dsm | Objective::DsmSliced | Objective::FdDsm)
    }

    /// The gradient-based objective this one approximates, if any.
    pub fn exact_counterpart(self) -> Option<Objective> {
        match self {
            Objective::FdSsm | Objective::MpfNaive => Some(Objective::Ssm),
            Objective::FdDsm => Some(Objective::DsmSliced),
            Objective::FdSsmvr => Some(Objective::Ssmvr),
            _ => None,
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.token() == s)
            .ok_or_else(|| Error::UnknownToken {
                kind: "objective",
                got: s.to_string(),
                valid: Objective::ALL.map(Objective::token).join(", "),
            })
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Projection directions, one per batch row, each of norm `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSample<T: Scalar> {
    pub v: Tensor<T>,
    pub epsilon: f64,
}

impl<T: Scalar> DirectionSample<T> {
    /// Uniform on the sphere of radius `epsilon`: normalised Gaussian rows.
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, epsilon: f64, rng: &mut R) -> Result<Self> {
        if !(epsilon > 0.0) || dim == 0 {
            return Err(Error::Argument(format!(
                "directions need epsilon > 0 and dim > 0 (got {epsilon}, {dim})"
            )));
        }
        let mut data = Vec::with_capacity(rows * dim);
        let mut z = vec![0.0f64; dim];
        for _ in 0..rows {
            let norm = loop {
                z.iter_mut().for_each(|zi| *zi = rng.sample(StandardNormal));
                let n = z.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 1e-300 {
                    break n;
                }
            };
            data.extend(z.iter().map(|zi| T::from_f64_lossy(zi * epsilon / norm)));
        }
        Ok(Self {
            v: Tensor::new(&[rows, dim], data)?,
            epsilon,
        })
    }

    pub fn from_tensor(v: Tensor<T>, epsilon: f64) -> Result<Self> {
        if v.ndim() != 2 || !(epsilon > 0.0) {
            return Err(Error::Argument("directions must be [B, d] with epsilon > 0".into()));
        }
        Ok(Self { v, epsilon })
    }

    pub fn rows(&self) -> usize {
        self.v.rows()
    }

    pub fn negated(&self) -> Self {
        Self {
            v: self.v.map(|x| -x),
            epsilon: self.epsilon,
        }
    }

    /// Every row multiplied by `c > 0`; the nominal radius follows.
    pub fn scaled(&self, c: f64) -> Self {
        let ct = T::from_f64_lossy(c);
        Self {
            v: self.v.scale(ct),
            epsilon: self.epsilon * c,
        }
    }

    /// `[v; -v]`, twice as many rows.
    pub fn antithetic(&self) -> Self {
        let neg = self.negated();
        Self {
            v: Tensor::concat_rows(&[&self.v, &neg.v]).expect("same width"),
            epsilon: self.epsilon,
        }
    }
}

/// `x + sigma z` with `z ~ N(0, I)`.
pub fn perturb<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, sigma: f64, rng: &mut R) -> Result<Tensor<T>> {
    if !(sigma > 0.0) {
        return Err(Error::Argument(format!("noise scale must be positive, got {sigma}")));
    }
    let data = x
        .data()
        .iter()
        .map(|xi| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64_lossy(xi.as_f64() + sigma * z)
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Everything an objective reads besides the model.
#[derive(Debug, Clone)]
pub struct ObjectiveInput<T: Scalar> {
    pub x: Tensor<T>,
    pub directions: Option<DirectionSample<T>>,
    pub noisy: Option<Tensor<T>>,
    pub sigma: f64,
}

impl<T: Scalar> ObjectiveInput<T> {
    pub fn new(x: Tensor<T>) -> Self {
        Self {
            x,
            directions: None,
            noisy: None,
            sigma: 0.0,
        }
    }

    pub fn with_directions(mut self, d: DirectionSample<T>) -> Self {
        self.directions = Some(d);
        self
    }

    pub fn with_noise(mut self, noisy: Tensor<T>, sigma: f64) -> Self {
        self.noisy = Some(noisy);
        self.sigma = sigma;
        self
    }

    /// Draw whatever `objective` needs: directions first, then noise.
    pub fn sample<R: Rng + ?Sized>(
        objective: Objective,
        x: Tensor<T>,
        epsilon: f64,
        sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (rows, dim) = (x.rows(), x.cols());
        let mut input = Self::new(x);
        if objective.needs_directions() {
            input.directions = Some(DirectionSample::sample(rows, dim, epsilon, rng)?);
        }
        if objective.needs_noise() {
            let noisy = perturb(&input.x, sigma, rng)?;
            input = input.with_noise(noisy, sigma);
        }
        Ok(input)
    }

    fn directions(&self, obj: Objective) -> Result<&DirectionSample<T>> {
        let d = self
            .directions
            .as_ref()
            .ok_or_else(|| Error::Argument(format!("objective `{obj}` needs projection directions")))?;
        if d.v.shape() != self.x.shape() {
            return Err(shape_err("directions", d.v.shape(), self.x.shape()));
        }
        Ok(d)
    }

    fn noisy(&self, obj: Objective) -> Result<&Tensor<T>> {
        if !(self.sigma > 0.0) {
            return Err(Error::Argument(format!(
                "objective `{obj}` needs a positive noise scale, got {}",
                self.sigma
            )));
        }
        let n = self
            .noisy
            .as_ref()
            .ok_or_else(|| Error::Argument(format!("objective `{obj}` needs perturbed data")))?;
        if n.shape() != self.x.shape() {
            return Err(shape_err("perturbed data", n.shape(), self.x.shape()));
        }
        Ok(n)
    }
}

/// Value and cost accounting of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    pub value: f64,
    /// Work done building the loss, excluding any later parameter gradient.
    pub counters: Counters,
    /// Nesting depth of the loss graph: 1 for plain forward evaluation.
    pub tape_depth: u32,
    pub epsilon: Option<f64>,
    pub sigma: Option<f64>,
}

/// A loss recorded on a tape.
pub struct LossGraph<'t, T: Scalar> {
    pub loss: Var<'t, T>,
    pub per_sample: Var<'t, T>,
    pub estimate: ObjectiveEstimate,
}

/// Record `objective` for the bound model on its tape.
pub fn evaluate<'t, T: Scalar>(
    objective: Objective,
    model: &Bound<'t, '_, T>,
    input: &ObjectiveInput<T>,
) -> Result<LossGraph<'t, T>> {
    let tape = model.tape();
    let x = &input.x;
    if x.ndim() != 2 || x.cols() != model.dim() {
        return Err(shape_err(objective.token(), x.shape(), &[0, model.dim()]));
    }
    if objective.needs_energy() && model.model_kind() == ModelKind::Score {
        return Err(Error::Argument(format!("objective `{objective}` needs an energy model")));
    }
    let start = tape.counters();
    let d = x.cols() as f64;
    let cg = GradMode::CreateGraph;
    let mut epsilon = None;
    let mut sigma = None;

    let per_sample = match objective {
        Objective::Sm => {
            let xv = tape.leaf(x.clone());
            let s = model.score(xv, cg)?;
            let mut trace: Option<Var<'t, T>> = None;
            for j in 0..x.cols() {
                let e = tape.constant(unit(x.cols(), j));
                let sj = s.mul(e)?.sum();
                let gj = tape.gradient(sj, &[xv], cg)?[0];
                let djj = gj.mul(e)?.sum_cols()?;
                trace = Some(match trace {
                    Some(t) => t.add(djj)?,
                    None => djj,
                });
            }
            let trace = trace.expect("dim > 0");
            trace.add(s.square().sum_cols()?.scale(0.5))?
        }
        Objective::Dsm => {
            let noisy = input.noisy(objective)?;
            sigma = Some(input.sigma);
            let target = tape.constant(noise_target(x, noisy, input.sigma)?);
            let s = model.score(tape.leaf(noisy.clone()), cg)?;
            s.add(target)?.square().sum_cols()?.scale(1.0 / d)
        }
        Objective::DsmSliced => {
            let dirs = input.directions(objective)?;
            let noisy = input.noisy(objective)?;
            epsilon = Some(dirs.epsilon);
            sigma = Some(input.sigma);
            let v = tape.constant(dirs.v.clone());
            let target = tape.constant(noise_target(x, noisy, input.sigma)?);
            let s = model.score(tape.leaf(noisy.clone()), cg)?;
            s.add(target)?
                .dot_rows(v)?
                .square()
                .scale(1.0 / dirs.epsilon.powi(2))
        }
        Objective::Ssm => {
            let dirs = input.directions(objective)?;
            epsilon = Some(dirs.epsilon);
            let v = tape.constant(dirs.v.clone());
            let xv = tape.leaf(x.clone());
            let s = model.score(xv, cg)?;
            let sv = s.dot_rows(v)?;
            let hv = tape.gradient(sv.sum(), &[xv], cg)?[0];
            let vhv = hv.dot_rows(v)?;
            vhv.add(sv.square().scale(0.5))?.scale(1.0 / dirs.epsilon.powi(2))
        }
        Objective::Ssmvr => {
            let dirs = input.directions(objective)?;
            epsilon = Some(dirs.epsilon);
            let v = tape.constant(dirs.v.clone());
            let xv = tape.leaf(x.clone());
            let s = model.score(xv, cg)?;
            let sv = s.dot_rows(v)?;
            let jv = tape.gradient(sv.sum(), &[xv], cg)?[0];
            let vjv = jv.dot_rows(v)?.scale(1.0 / dirs.epsilon.powi(2));
            vjv.add(s.square().sum_cols()?.scale(0.5 / d))?
        }
        Objective::FdSsm => {
            let dirs = input.directions(objective)?;
            epsilon = Some(dirs.epsilon);
            let b = x.rows();
            let xp = x.add(&dirs.v)?;
            let xm = x.sub(&dirs.v)?;
            let batch = tape.constant(Tensor::concat_rows(&[x, &xp, &xm])?);
            let l = model.energy(batch)?;
            let (l0, lp, lm) = (l.slice_rows(0, b)?, l.slice_rows(b, b)?, l.slice_rows(2 * b, b)?);
            let second = lp.add(lm)?.sub(l0.scale(2.0))?;
            let first = lp.sub(lm)?.square().scale(0.125);
            second.add(first)?.scale(1.0 / dirs.epsilon.powi(2))
        }
        Objective::FdDsm => {
            let dirs = input.directions(objective)?;
            let noisy = input.noisy(objective)?;
            epsilon = Some(dirs.epsilon);
            sigma = Some(input.sigma);
            let b = x.rows();
            let target = noise_target(x, noisy, input.sigma)?;
            let shift = target.mul(&dirs.v)?.sum_cols()?.scale(T::from_f64_lossy(2.0));
            let batch = tape.constant(Tensor::concat_rows(&[&noisy.add(&dirs.v)?, &noisy.sub(&dirs.v)?])?);
            let l = model.energy(batch)?;
            let diff = l.slice_rows(0, b)?.sub(l.slice_rows(b, b)?)?;
            diff.add(tape.constant(shift))?
                .square()
                .scale(0.25 / dirs.epsilon.powi(2))
        }
        Objective::FdSsmvr => {
            let dirs = input.directions(objective)?;
            epsilon = Some(dirs.epsilon);
            let b = x.rows();
            let v = tape.constant(dirs.v.clone());
            let batch = tape.constant(Tensor::concat_rows(&[&x.add(&dirs.v)?, &x.sub(&dirs.v)?])?);
            let s = model.score(batch, cg)?;
            let (sp, sm) = (s.slice_rows(0, b)?, s.slice_rows(b, b)?);
            let norm_term = sp.add(sm)?.square().sum_cols()?.scale(1.0 / (8.0 * d));
            let proj = sp.sub(sm)?.dot_rows(v)?.scale(0.5 / dirs.epsilon.powi(2));
            norm_term.add(proj)?
        }
        Objective::MpfNaive => {
            let dirs = input.directions(objective)?;
            epsilon = Some(dirs.epsilon);
            let b = x.rows();
            let batch = tape.constant(Tensor::concat_rows(&[x, &x.add(&dirs.v)?])?);
            let l = model.energy(batch)?;
            let delta = l.slice_rows(b, b)?.sub(l.slice_rows(0, b)?)?;
            delta
                .square()
                .add(delta.scale(4.0))?
                .scale(0.5 / dirs.epsilon.powi(2))
        }
    };

    let loss = per_sample.mean();
    let estimate = ObjectiveEstimate {
        value: loss.item().as_f64(),
        counters: tape.counters().since(&start),
        tape_depth: loss.level().max(1),
        epsilon,
        sigma,
    };
    Ok(LossGraph {
        loss,
        per_sample,
        estimate,
    })
}

/// Loss value and parameter gradients, one block per model parameter.
#[derive(Debug, Clone)]
pub struct Evaluation<T: Scalar> {
    pub estimate: ObjectiveEstimate,
    pub grads: Vec<Tensor<T>>,
    /// Counters including the parameter-gradient pass.
    pub total_counters: Counters,
}

pub fn value_and_grad<T: Scalar>(
    objective: Objective,
    model: &Model<T>,
    input: &ObjectiveInput<T>,
) -> Result<Evaluation<T>> {
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let graph = evaluate(objective, &bound, input)?;
    let grads = tape.gradient(graph.loss, bound.params(), GradMode::Detached)?;
    Ok(Evaluation {
        estimate: graph.estimate,
        grads: grads.iter().map(|g| g.value().as_ref().clone()).collect(),
        total_counters: tape.counters(),
    })
}

/// Objective value only (parameters held constant).
pub fn value<T: Scalar>(objective: Objective, model: &Model<T>, input: &ObjectiveInput<T>) -> Result<ObjectiveEstimate> {
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    Ok(evaluate(objective, &bound, input)?.estimate)
}

/// Angle in degrees between the flattened parameter gradients of two objectives.
pub fn grad_angle<T: Scalar>(
    a: Objective,
    b: Objective,
    model: &Model<T>,
    input: &ObjectiveInput<T>,
) -> Result<f64> {
    let flat = |o: Objective| -> Result<Vec<f64>> {
        let e = value_and_grad(o, model, input)?;
        Ok(e.grads.iter().flat_map(|g| g.to_f64_vec()).collect())
    };
    angle_between(&flat(a)?, &flat(b)?)
}

/// Angle in degrees; `2 asin(|u - w| / 2)` on the unit vectors stays
/// accurate for nearly parallel inputs.
pub fn angle_between(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0) {
        return Err(Error::ZeroGradient { side: 'A' });
    }
    if !(nb > 0.0) {
        return Err(Error::ZeroGradient { side: 'B' });
    }
    let chord = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / na - y / nb).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok((2.0 * (chord / 2.0).min(1.0).asin()).to_degrees())
}

/// `(x~ - x) / sigma^2`.
fn noise_target<T: Scalar>(x: &Tensor<T>, noisy: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    Ok(noisy.sub(x)?.scale(T::from_f64_lossy(1.0 / (sigma * sigma))))
}

fn unit<T: Scalar>(d: usize, j: usize) -> Tensor<T> {
    let mut e = Tensor::zeros(&[d]);
    e.data_mut()[j] = T::one();
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Mlp, QuadraticEnergyModel};

    fn gaussian() -> Model<f64> {
        Model::Quadratic(QuadraticEnergyModel::standard(2))
    }

    fn linear_score() -> Model<f64> {
        // s(x) = -x
        let w = Tensor::from_f64(&[2, 2], &[-1., 0., 0., -1.]).unwrap();
        Model::Score(Mlp::from_layers(vec![w], vec![Tensor::zeros(&[2])]).unwrap())
    }

    fn x10() -> Tensor<f64> {
        Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap()
    }

    fn dirs(v: &[f64]) -> DirectionSample<f64> {
        let eps = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        DirectionSample::from_tensor(Tensor::from_f64(&[1, v.len()], v).unwrap(), eps).unwrap()
    }

    #[test]
    fn tokens_round_trip_and_unknown_lists_valid() {
        for o in Objective::ALL {
            assert_eq!(o.token().parse::<Objective>().unwrap(), o);
        }
        let msg = "ssm2".parse::<Objective>().unwrap_err().to_string();
        assert!(msg.contains("fd-ssmvr") && msg.contains("mpf-naive"));
    }

    #[test]
    fn gaussian_closed_forms() {
        let m = gaussian();
        let sm = value(Objective::Sm, &m, &ObjectiveInput::new(x10())).unwrap();
        assert!((sm.value + 1.5).abs() < 1e-14);
        let input = ObjectiveInput::new(x10()).with_directions(dirs(&[0.1, 0.0]));
        for o in [Objective::Ssm, Objective::FdSsm] {
            let e = value(o, &m, &input).unwrap();
            assert!((e.value + 0.5).abs() < 1e-12, "{o}: {}", e.value);
        }
    }

    #[test]
    fn linear_score_closed_forms() {
        let m = linear_score();
        for eps in [0.1, 0.01] {
            let input = ObjectiveInput::new(x10()).with_directions(dirs(&[0.6 * eps, 0.8 * eps]));
            for o in [Objective::Ssmvr, Objective::FdSsmvr] {
                let e = value(o, &m, &input).unwrap();
                assert!((e.value + 0.75).abs() < 1e-12, "{o} at {eps}: {}", e.value);
            }
        }
    }

    #[test]
    fn dsm_cancels_on_gaussian() {
        let m = Model::Quadratic(QuadraticEnergyModel::standard(1));
        let x = Tensor::from_f64(&[1, 1], &[0.0]).unwrap();
        let xt = Tensor::from_f64(&[1, 1], &[0.5]).unwrap();
        let input = ObjectiveInput::new(x)
            .with_noise(xt, 1.0)
            .with_directions(dirs(&[0.1]));
        for o in [Objective::Dsm, Objective::DsmSliced, Objective::FdDsm] {
            assert!(value(o, &m, &input).unwrap().value.abs() < 1e-14, "{o}");
        }
    }

    #[test]
    fn fd_counters_and_depth() {
        let m = gaussian();
        let input = ObjectiveInput::new(x10()).with_directions(dirs(&[0.1, 0.0]));
        let fd = value_and_grad(Objective::FdSsm, &m, &input).unwrap();
        assert_eq!(fd.estimate.counters.forward_evals, 3);
        assert_eq!(fd.estimate.counters.nested_passes, 0);
        assert_eq!(fd.estimate.tape_depth, 1);
        assert_eq!(fd.total_counters.first_order_passes, 1);
        let ssm = value_and_grad(Objective::Ssm, &m, &input).unwrap();
        assert!(ssm.estimate.counters.nested_passes >= 1);
        assert!(ssm.estimate.tape_depth >= 2);
    }

    #[test]
    fn missing_inputs_are_argument_errors() {
        let m = gaussian();
        let err = value(Objective::Ssm, &m, &ObjectiveInput::new(x10())).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
        let input = ObjectiveInput::new(x10()).with_noise(x10(), 0.0);
        assert!(matches!(value(Objective::Dsm, &m, &input), Err(Error::Argument(_))));
        let input = ObjectiveInput::new(x10()).with_directions(dirs(&[0.1, 0.0]));
        assert!(matches!(value(Objective::FdSsm, &linear_score(), &input), Err(Error::Argument(_))));
    }

    #[test]
    fn angle_helpers() {
        assert_eq!(angle_between(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
        assert!((angle_between(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 90.0).abs() < 1e-12);
        assert!((angle_between(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 180.0).abs() < 1e-12);
        assert!(matches!(angle_between(&[0.0], &[1.0]), Err(Error::ZeroGradient { side: 'A' })));
        assert!(matches!(angle_between(&[1.0], &[0.0]), Err(Error::ZeroGradient { side: 'B' })));
    }
}
