//! Named parameter storage, seeded initialization and fully connected networks.

use crate::linalg::Matrix;
use crate::rng::SplitMix64;

use super::tape::{Tape, TapeError, Var};

/// Initial slope of every PReLU activation.
pub const PRELU_INIT: f64 = 0.25;

/// Ordered, named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, slot: usize) -> &Matrix {
        &self.values[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Matrix {
        &mut self.values[slot]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.values.iter().map(Matrix::shape).collect()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Scalar count of the slots whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.values)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Records every parameter on `tape`; `vars[slot]` is the handle of slot `slot`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().enumerate().map(|(i, v)| tape.param(i, v.clone())).collect()
    }
}

/// `U(-sqrt(1/fan_in), sqrt(1/fan_in))` entries.
pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut SplitMix64) -> Matrix {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect())
}

/// Slots of one affine map `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Self {
        let weight = store.add(format!("{name}.w"), fan_in_uniform(fan_in, fan_out, fan_in, rng));
        let bias = store.add(format!("{name}.b"), fan_in_uniform(1, fan_out, fan_in, rng));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, TapeError> {
        let y = tape.matmul(x, vars[self.weight])?;
        tape.add_row(y, vars[self.bias])
    }
}

/// Fully connected network: affine maps with PReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fcnn {
    pub layers: Vec<Dense>,
    pub slopes: Vec<usize>,
    pub widths: Vec<usize>,
}

impl Fcnn {
    /// `widths = [input, hidden..., output]`; `widths.len() - 2` hidden layers.
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut SplitMix64) -> Self {
        assert!(widths.len() >= 2, "an FCNN needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        let slopes = (0..widths.len() - 2)
            .map(|i| store.add(format!("{name}.{i}.prelu"), Matrix::scalar(PRELU_INIT)))
            .collect();
        Self { layers, slopes, widths: widths.to_vec() }
    }

    pub fn hidden_layers(&self) -> usize {
        self.slopes.len()
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, TapeError> {
        let layers: Vec<(Var, Var)> = self.layers.iter().map(|l| (vars[l.weight], vars[l.bias])).collect();
        let slopes: Vec<Var> = self.slopes.iter().map(|&s| vars[s]).collect();
        fcnn(tape, x, &layers, &slopes)
    }
}

/// Alternating affine and PReLU layers over the rows of `input`; the last layer stays linear.
pub fn fcnn(tape: &mut Tape, input: Var, layers: &[(Var, Var)], slopes: &[Var]) -> Result<Var, TapeError> {
    let mut h = input;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.matmul(h, w)?;
        h = tape.add_row(h, b)?;
        if i + 1 < layers.len() {
            h = tape.prelu(h, slopes[i])?;
        }
    }
    Ok(h)
}
