//! Smooth parametric models: an MLP log-density `L(x)`, an MLP score
//! `s(x)`, and a closed-form quadratic log-density used as an oracle.
//!
//! All activations are Softplus, so every nested derivative exists.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradMode, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FDSM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fully connected Softplus network, no normalisation layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar> {
    widths: Vec<usize>,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Argument(format!("invalid layer widths {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
                .collect();
            weights.push(Tensor::new(&[fan_in, fan_out], data)?);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_layers(weights: Vec<Tensor<T>>, biases: Vec<Tensor<T>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Argument("need one bias per weight matrix".into()));
        }
        let mut widths = vec![weights[0].rows()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ndim() != 2 || w.rows() != *widths.last().expect("non-empty") {
                return Err(shape_err("mlp layer", w.shape(), &[*widths.last().unwrap()]));
            }
            if b.shape() != [w.shape()[1]] {
                return Err(shape_err("mlp bias", b.shape(), &[w.shape()[1]]));
            }
            widths.push(w.shape()[1]);
        }
        Ok(Self {
            widths,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor<T>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    fn forward<'t>(&self, params: &[Var<'t, T>], x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(shape_err("mlp forward", &shape, &[0, self.input_dim()]));
        }
        let layers = self.weights.len();
        let mut h = x;
        for l in 0..layers {
            h = h.matmul(params[2 * l])?.add(params[2 * l + 1])?;
            if l + 1 < layers {
                h = h.softplus();
            }
        }
        Ok(h)
    }
}

/// `L(x) = -(a / 2) |x - mu|^2` with learnable `mu` and precision `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnergyModel<T: Scalar> {
    pub mean: Tensor<T>,
    pub precision: Tensor<T>,
}

impl<T: Scalar> QuadraticEnergyModel<T> {
    /// Standard Gaussian log-density up to a constant.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[dim]),
            precision: Tensor::ones(&[1]),
        }
    }

    pub fn energy_at(&self, x: &[f64]) -> f64 {
        let a = self.precision.item().as_f64();
        let sq: f64 = x.iter().zip(self.mean.data()).map(|(xi, m)| (xi - m.as_f64()).powi(2)).sum();
        -0.5 * a * sq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Scalar log-density network.
    Energy,
    /// Vector score network.
    Score,
    Quadratic,
}

impl ModelKind {
    fn code(self) -> u32 {
        match self {
            ModelKind::Energy => 0,
            ModelKind::Score => 1,
            ModelKind::Quadratic => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(ModelKind::Energy),
            1 => Ok(ModelKind::Score),
            2 => Ok(ModelKind::Quadratic),
            _ => Err(Error::Format(format!("unknown model kind {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model<T: Scalar> {
    Energy(Mlp<T>),
    Score(Mlp<T>),
    Quadratic(QuadraticEnergyModel<T>),
}

impl<T: Scalar> Model<T> {
    /// Energy MLP `d -> hidden... -> 1`.
    pub fn energy_mlp(dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(Model::Energy(Mlp::init(&widths, seed)?))
    }

    /// Score MLP `d -> hidden... -> d`.
    pub fn score_mlp(dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![dim];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Ok(Model::Score(Mlp::init(&widths, seed)?))
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Energy(_) => ModelKind::Energy,
            Model::Score(_) => ModelKind::Score,
            Model::Quadratic(_) => ModelKind::Quadratic,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Energy(m) | Model::Score(m) => m.input_dim(),
            Model::Quadratic(q) => q.mean.numel(),
        }
    }

    pub fn has_energy(&self) -> bool {
        !matches!(self, Model::Score(_))
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Model::Energy(m) | Model::Score(m) => m
                .weights
                .iter()
                .zip(&m.biases)
                .flat_map(|(w, b)| [w, b])
                .collect(),
            Model::Quadratic(q) => vec![&q.mean, &q.precision],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Model::Energy(m) | Model::Score(m) => m
                .weights
                .iter_mut()
                .zip(m.biases.iter_mut())
                .flat_map(|(w, b)| [w, b])
                .collect(),
            Model::Quadratic(q) => vec![&mut q.mean, &mut q.precision],
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Model::Energy(m) | Model::Score(m) => (0..m.weights.len())
                .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
                .collect(),
            Model::Quadratic(_) => vec!["mean".into(), "precision".into()],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Put the parameters on `tape`: as leaves when `trainable`, else constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, '_, T> {
        let params = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        Bound {
            model: self,
            tape,
            params,
            offset: 0.0,
        }
    }

    /// Convenience: log-density values for a batch, no tape kept.
    pub fn energy_values(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = bound.energy(tape.constant(x.clone()))?;
        let v = out.value();
        Ok(v.as_ref().clone())
    }

    /// Convenience: score values for a batch (one reverse pass for energies).
    pub fn score_values(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let out = bound.score(tape.constant(x.clone()), GradMode::Detached)?;
        let v = out.value();
        Ok(v.as_ref().clone())
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let (weights, biases): (Vec<&Tensor<T>>, Vec<&Tensor<T>>) = match self {
            Model::Energy(m) | Model::Score(m) => (m.weights.iter().collect(), m.biases.iter().collect()),
            Model::Quadratic(q) => (vec![&q.mean], vec![&q.precision]),
        };
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.kind().code().to_le_bytes())?;
        w.write_all(&(weights.len() as u32).to_le_bytes())?;
        for (wt, b) in weights.iter().zip(&biases) {
            let (rows, cols) = match self {
                Model::Quadratic(_) => (wt.numel(), b.numel()),
                _ => (wt.shape()[0], wt.shape()[1]),
            };
            w.write_all(&(rows as u32).to_le_bytes())?;
            w.write_all(&(cols as u32).to_le_bytes())?;
        }
        for (wt, b) in weights.iter().zip(&biases) {
            for x in wt.data().iter().chain(b.data()) {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32_buf)?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_code(read_u32(&mut r)?)?;
        let layers = read_u32(&mut r)? as usize;
        if layers == 0 || layers > 1024 {
            return Err(Error::Format(format!("implausible layer count {layers}")));
        }
        let mut shapes = Vec::with_capacity(layers);
        for _ in 0..layers {
            shapes.push((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize));
        }
        let mut read_f64s = |n: usize| -> Result<Vec<T>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect())
        };
        match kind {
            ModelKind::Quadratic => {
                let (d, one) = shapes[0];
                if layers != 1 || one != 1 {
                    return Err(Error::Format("quadratic model needs one (d, 1) block".into()));
                }
                let mean = Tensor::new(&[d], read_f64s(d)?)?;
                let precision = Tensor::new(&[1], read_f64s(1)?)?;
                Ok(Model::Quadratic(QuadraticEnergyModel { mean, precision }))
            }
            ModelKind::Energy | ModelKind::Score => {
                let mut weights = Vec::with_capacity(layers);
                let mut biases = Vec::with_capacity(layers);
                for &(rows, cols) in &shapes {
                    weights.push(Tensor::new(&[rows, cols], read_f64s(rows * cols)?)?);
                    biases.push(Tensor::new(&[cols], read_f64s(cols)?)?);
                }
                let mlp = Mlp::from_layers(weights, biases)?;
                Ok(if kind == ModelKind::Energy {
                    Model::Energy(mlp)
                } else {
                    Model::Score(mlp)
                })
            }
        }
    }
}

/// A model whose parameters live on a tape.
pub struct Bound<'t, 'm, T: Scalar> {
    model: &'m Model<T>,
    tape: &'t Tape<T>,
    params: Vec<Var<'t, T>>,
    offset: f64,
}

impl<'t, T: Scalar> Bound<'t, '_, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn params(&self) -> &[Var<'t, T>] {
        &self.params
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Add a constant to every log-density output (a change of normaliser).
    pub fn with_energy_offset(mut self, c: f64) -> Self {
        self.offset = c;
        self
    }

    /// Per-row log-density `[B, d] -> [B]`.
    pub fn energy(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let rows = x.shape().first().copied().unwrap_or(0);
        let out = match self.model {
            Model::Energy(m) => {
                let h = m.forward(&self.params, x)?;
                h.reshape(&[rows])?
            }
            Model::Quadratic(_) => {
                let shape = x.shape();
                if shape.len() != 2 || shape[1] != self.dim() {
                    return Err(shape_err("quadratic energy", &shape, &[0, self.dim()]));
                }
                let (mean, precision) = (self.params[0], self.params[1]);
                let sq = x.sub(mean)?.square().sum_cols()?;
                sq.mul(precision.reshape(&[])?)?.scale(-0.5)
            }
            Model::Score(_) => {
                return Err(Error::Argument("score models have no log-density".into()));
            }
        };
        self.tape.count_forward(rows);
        if self.offset != 0.0 {
            out.add(self.tape.scalar(self.offset))
        } else {
            Ok(out)
        }
    }

    /// Per-row score `[B, d] -> [B, d]`. Energy models differentiate their
    /// log-density w.r.t. `x` in the given mode.
    pub fn score(&self, x: Var<'t, T>, mode: GradMode) -> Result<Var<'t, T>> {
        match self.model {
            Model::Score(m) => {
                let rows = x.shape().first().copied().unwrap_or(0);
                let out = m.forward(&self.params, x)?;
                self.tape.count_forward(rows);
                Ok(out)
            }
            _ => {
                // `x` must be differentiable for the reverse pass to reach it.
                let x = if x.requires_grad() {
                    x
                } else {
                    self.tape.leaf(x.value().as_ref().clone())
                };
                let e = self.energy(x)?.sum();
                Ok(self.tape.gradient(e, &[x], mode)?[0])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_energy_value() {
        let m = Model::<f64>::Quadratic(QuadraticEnergyModel::standard(2));
        let x = Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap();
        assert_eq!(m.energy_values(&x).unwrap().data(), &[-0.5]);
    }

    #[test]
    fn zero_weight_mlp_is_input_independent() {
        let widths = [2, 4, 3, 1];
        let weights: Vec<_> = widths.windows(2).map(|w| Tensor::<f64>::zeros(&[w[0], w[1]])).collect();
        let biases: Vec<_> = widths[1..].iter().map(|&n| Tensor::<f64>::zeros(&[n])).collect();
        let m = Model::Energy(Mlp::from_layers(weights, biases).unwrap());
        let x = Tensor::from_f64(&[3, 2], &[0., 0., 1., -2., 5., 3.]).unwrap();
        let out = m.energy_values(&x).unwrap();
        assert_eq!(out.shape(), &[3]);
        assert!(out.data().iter().all(|&v| v == out.data()[0]));
    }

    #[test]
    fn zero_weight_mlp_with_unit_readout_gives_ln2_times_fan() {
        let hidden = 5;
        let weights = vec![Tensor::<f64>::zeros(&[2, hidden]), Tensor::ones(&[hidden, 1])];
        let biases = vec![Tensor::zeros(&[hidden]), Tensor::zeros(&[1])];
        let m = Model::Energy(Mlp::from_layers(weights, biases).unwrap());
        let out = m.energy_values(&Tensor::from_f64(&[1, 2], &[3., 4.]).unwrap()).unwrap();
        assert!((out.item() - hidden as f64 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Mlp::<f64>::init(&[2, 16, 1], 7).unwrap();
        let b = Mlp::<f64>::init(&[2, 16, 1], 7).unwrap();
        let c = Mlp::<f64>::init(&[2, 16, 1], 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for w in a.weights() {
            let bound = (6.0 / (w.shape()[0] + w.shape()[1]) as f64).sqrt();
            assert!(w.data().iter().all(|x| x.abs() <= bound));
        }
        assert!(Mlp::<f64>::init(&[2, 0, 1], 1).is_err());
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let m = Model::<f64>::energy_mlp(2, &[4], 0).unwrap();
        let x = Tensor::zeros(&[3, 5]);
        assert!(matches!(m.energy_values(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn energy_offset_shifts_each_row() {
        let m = Model::<f64>::energy_mlp(2, &[8], 3).unwrap();
        let x = Tensor::from_f64(&[2, 2], &[0.1, 0.2, -1.0, 0.5]).unwrap();
        let tape = Tape::new();
        let plain = m.bind(&tape, false).energy(tape.constant(x.clone())).unwrap().value();
        let shifted = m
            .bind(&tape, false)
            .with_energy_offset(3.0)
            .energy(tape.constant(x))
            .unwrap()
            .value();
        for (a, b) in plain.data().iter().zip(shifted.data()) {
            assert!((b - a - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        for model in [
            Model::<f64>::energy_mlp(2, &[8, 8], 1).unwrap(),
            Model::<f64>::score_mlp(2, &[4], 2).unwrap(),
            Model::<f64>::Quadratic(QuadraticEnergyModel::standard(3)),
        ] {
            let mut buf = Vec::new();
            model.save(&mut buf).unwrap();
            assert_eq!(&buf[..4], b"FDSM");
            let back = Model::<f64>::load(buf.as_slice()).unwrap();
            assert_eq!(back, model);
        }
        assert!(matches!(Model::<f64>::load(&b"NOPE\x01\0\0\0"[..]), Err(Error::Format(_))));
    }
}
