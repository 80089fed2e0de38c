//! Windowed datasets, the rate-prediction loss, mini-batch training and rollout evaluation.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::linalg::Matrix;
use crate::model::{HistoryWindow, LaplacianTiming, ModelError, RomModel, TopologyBank};
use crate::rng::SplitMix64;
use crate::tensor::{adam_step, lr_schedule, AdamConfig, AdamState, Tape, TapeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("trajectory {id} has {len} samples, delay {delay} needs at least {}", delay + 1)]
    TooShort { id: usize, len: usize, delay: usize },
    #[error("trajectory {0} appears in both splits")]
    Overlap(usize),
    #[error("dataset is empty")]
    Empty,
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("prediction and truth shapes differ: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("truth has zero range in column {0}")]
    ZeroRange(usize),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Samples `(trajectory, t)` with windows ending at `t` and target `(xbar_{t+1} - xbar_t) / dt`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub delay: usize,
    pub dt: f64,
    pub trajectories: Arc<Vec<Trajectory>>,
    /// Trajectory identifiers, parallel to `trajectories`.
    pub ids: Vec<usize>,
    pub samples: Vec<(usize, usize)>,
}

/// One sample per `t` in `[T, N_t - 2]` of every trajectory.
pub fn build_dataset(trajectories: Vec<Trajectory>, ids: &[usize], delay: usize) -> Result<Dataset, TrainError> {
    if delay == 0 {
        return Err(TrainError::Config("delay must be >= 1".into()));
    }
    let mut samples = Vec::new();
    for (k, tr) in trajectories.iter().enumerate() {
        if tr.len() < delay + 1 {
            return Err(TrainError::TooShort { id: ids.get(k).copied().unwrap_or(k), len: tr.len(), delay });
        }
        samples.extend((delay..tr.len().saturating_sub(1)).map(|t| (k, t)));
    }
    let dt = trajectories.first().map_or(0.0, |t| t.meta.dt);
    let ids = if ids.len() == trajectories.len() { ids.to_vec() } else { (0..trajectories.len()).collect() };
    Ok(Dataset { delay, dt, trajectories: Arc::new(trajectories), ids, samples })
}

/// Rejects overlapping train/test trajectory identifiers.
pub fn check_split(train: &Dataset, test: &Dataset) -> Result<(), TrainError> {
    match train.ids.iter().find(|id| test.ids.contains(id)) {
        Some(&id) => Err(TrainError::Overlap(id)),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Target rate of sample `i`.
    pub fn target(&self, i: usize) -> Vec<f64> {
        let (k, t) = self.samples[i];
        let s = &self.trajectories[k].states;
        s.row(t + 1).iter().zip(s.row(t)).map(|(a, b)| (a - b) / self.dt).collect()
    }

    /// The history window of sample `i`.
    pub fn window(&self, i: usize) -> HistoryWindow {
        let (k, t) = self.samples[i];
        let tr = &self.trajectories[k];
        let start = t + 1 - self.delay;
        HistoryWindow {
            states: tr.states.block(start, 0, self.delay, tr.dim()),
            indices: tr.topo_indices[start..=t].to_vec(),
            next_index: tr.topo_indices[t + 1],
        }
    }

    /// Standard deviation of all target entries.
    pub fn target_std(&self) -> f64 {
        let mut n = 0.0;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..self.len() {
            for v in self.target(i) {
                n += 1.0;
                s += v;
                s2 += v * v;
            }
        }
        if n == 0.0 {
            return 0.0;
        }
        let mean = s / n;
        (s2 / n - mean * mean).max(0.0).sqrt()
    }
}

/// Stacked encoder inputs `(B M) x width`, processor topologies and targets `(B M) x m`.
pub struct Batch {
    pub input: Matrix,
    pub topo: Vec<usize>,
    pub target: Matrix,
}

pub fn make_batch(model: &RomModel, data: &Dataset, which: &[usize]) -> Batch {
    let c = &model.config;
    let (m, d) = (c.nodes, c.node_dim);
    let width = c.input_width();
    let mut input = Matrix::zeros(which.len() * m, width);
    let mut target = Matrix::zeros(which.len() * m, d);
    let mut topo = Vec::with_capacity(which.len());
    for (b, &i) in which.iter().enumerate() {
        let (k, t) = data.samples[i];
        let tr = &data.trajectories[k];
        for node in 0..m {
            model.fill_input(&tr.states, &tr.topo_indices, t, node, input.row_mut(b * m + node));
            let (now, next) = (tr.states.row(t), tr.states.row(t + 1));
            for q in 0..d {
                let c = node * d + q;
                target[(b * m + node, q)] = (next[c] - now[c]) / data.dt;
            }
        }
        topo.push(match c.laplacian_timing {
            LaplacianTiming::Next => tr.topo_indices[t + 1],
            LaplacianTiming::Current => tr.topo_indices[t],
        });
    }
    Batch { input, topo, target }
}

/// Mean squared error between `F_G` and the target rates over the given samples.
pub fn loss(model: &RomModel, data: &Dataset, which: &[usize], bank: &TopologyBank) -> Result<f64, TrainError> {
    if which.is_empty() {
        return Err(TrainError::Empty);
    }
    let batch = make_batch(model, data, which);
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let x = tape.leaf(batch.input);
    let y = model.forward(&mut tape, &vars, x, &batch.topo, bank)?;
    let t = tape.leaf(batch.target);
    let l = tape.mse(y, t)?;
    Ok(tape.value(l)[(0, 0)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub decay: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Set the model's rate scale to the target standard deviation before training.
    pub scale_rates: bool,
    /// Standard deviation of Gaussian noise added to the window states of every training batch.
    pub input_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch: 64, lr0: 1e-3, decay: 0.99, seed: 0, adam: AdamConfig::default(), scale_rates: true, input_noise: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch == 0 {
            return Err(TrainError::Config("batch size must be >= 1".into()));
        }
        if !(self.input_noise >= 0.0) {
            return Err(TrainError::Config("input noise must be >= 0".into()));
        }
        if !(self.lr0 >= 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(TrainError::Config("need lr0 >= 0 and 0 < decay <= 1".into()));
        }
        Ok(())
    }
}

const NOISE_STREAM: u64 = 1 << 32;

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
}

/// Mini-batch Adam with per-epoch exponential learning-rate decay and seeded shuffling.
pub fn train(
    model: &mut RomModel,
    data: &Dataset,
    bank: &TopologyBank,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if cfg.scale_rates {
        let s = data.target_std();
        model.rate_scale = if s > 0.0 { s } else { 1.0 };
    }
    let mut state = AdamState::new(&model.params, cfg.adam);
    let shapes = model.params.shapes();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    let mut tape = Tape::new();
    for epoch in 0..cfg.epochs {
        SplitMix64::child(cfg.seed, epoch as u64).shuffle(&mut order);
        let lr = lr_schedule(epoch, cfg.lr0, cfg.decay);
        let mut total = 0.0;
        let mut noise = SplitMix64::child(cfg.seed, NOISE_STREAM + epoch as u64);
        let state_cols = model.config.delay * model.config.node_dim;
        for chunk in order.chunks(cfg.batch) {
            let mut batch = make_batch(model, data, chunk);
            if cfg.input_noise > 0.0 {
                for r in 0..batch.input.rows() {
                    for v in &mut batch.input.row_mut(r)[..state_cols] {
                        *v += cfg.input_noise * noise.normal();
                    }
                }
            }
            tape.clear();
            let vars = model.params.bind(&mut tape);
            let x = tape.leaf(batch.input);
            let y = model.forward(&mut tape, &vars, x, &batch.topo, bank)?;
            let t = tape.leaf(batch.target);
            let l = tape.mse(y, t)?;
            let value = tape.value(l)[(0, 0)];
            if !value.is_finite() {
                return Err(TrainError::Diverged(epoch));
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(l)?.params(&shapes);
            adam_step(&mut model.params, &grads, &mut state, lr).map_err(|e| match e {
                TapeError::NonFiniteGradient(_) => TrainError::Diverged(epoch),
                other => TrainError::Tape(other),
            })?;
        }
        history.losses.push(total / data.len() as f64);
    }
    Ok(history)
}

/// `(1 / C) sum_c RMSE_c / (max_k truth_c - min_k truth_c)` over the columns `c` of the truth.
pub fn nrmse(pred: &Matrix, truth: &Matrix) -> Result<f64, TrainError> {
    nrmse_with(pred, truth, false)
}

/// As [`nrmse`]; with `skip_flat`, zero-range columns are left out instead of rejected.
pub fn nrmse_with(pred: &Matrix, truth: &Matrix, skip_flat: bool) -> Result<f64, TrainError> {
    if pred.shape() != truth.shape() || truth.rows() == 0 {
        return Err(TrainError::Shape(pred.shape(), truth.shape()));
    }
    let (rows, cols) = truth.shape();
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..cols {
        let (mut lo, mut hi, mut se) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for r in 0..rows {
            let t = truth[(r, c)];
            lo = lo.min(t);
            hi = hi.max(t);
            se += (pred[(r, c)] - t).powi(2);
        }
        let range = hi - lo;
        if range <= 0.0 {
            if skip_flat {
                continue;
            }
            return Err(TrainError::ZeroRange(c));
        }
        total += (se / rows as f64).sqrt() / range;
        used += 1;
    }
    if used == 0 {
        return Err(TrainError::ZeroRange(0));
    }
    Ok(total / used as f64)
}

/// Per-trajectory NRMSE with its mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_trajectory: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn from_values(per_trajectory: Vec<f64>, config: Vec<(String, String)>) -> Self {
        let n = per_trajectory.len().max(1) as f64;
        let mean = per_trajectory.iter().sum::<f64>() / n;
        let var = per_trajectory.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { per_trajectory, mean, std: var.sqrt(), config }
    }
}

/// Seed window: the first `T` samples of a coarse trajectory.
pub fn seed_window(tr: &Trajectory, delay: usize, next_index: usize) -> HistoryWindow {
    HistoryWindow {
        states: tr.states.block(0, 0, delay, tr.dim()),
        indices: tr.topo_indices[..delay].to_vec(),
        next_index,
    }
}

/// Rollout from the first `T` true samples over the rest of the trajectory; returns the
/// prediction of samples `T..N_t` and its NRMSE against the truth.
pub fn rollout_trajectory(model: &RomModel, tr: &Trajectory, bank: &TopologyBank) -> Result<(Matrix, f64), TrainError> {
    let delay = model.config.delay;
    if tr.len() <= delay {
        return Err(TrainError::TooShort { id: 0, len: tr.len(), delay });
    }
    let schedule = &tr.topo_indices[delay..];
    let window = seed_window(tr, delay, schedule[0]);
    let pred = model.rollout(&window, schedule, bank)?;
    let truth = tr.states.block(delay, 0, tr.len() - delay, tr.dim());
    let e = nrmse(&pred, &truth)?;
    Ok((pred, e))
}

/// Rollout NRMSE of every trajectory, evaluated in parallel.
pub fn evaluate(model: &RomModel, trajectories: &[Trajectory], bank: &TopologyBank) -> Result<EvalReport, TrainError> {
    let values: Vec<f64> = trajectories
        .par_iter()
        .map(|tr| rollout_trajectory(model, tr, bank).map(|(_, e)| e))
        .collect::<Result<_, _>>()?;
    let c = &model.config;
    let config = vec![
        ("variant".to_string(), c.variant.name().to_string()),
        ("T".to_string(), c.delay.to_string()),
        ("S".to_string(), c.order.to_string()),
        ("N_C".to_string(), c.layers.to_string()),
        ("hops".to_string(), c.hops().to_string()),
    ];
    Ok(EvalReport::from_values(values, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TrajectoryMeta;
    use crate::graph::Graph;
    use crate::model::ModelConfig;

    fn traj(len: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Trajectory {
        Trajectory {
            times: (0..len).map(|k| k as f64 * 0.1).collect(),
            states: Matrix::from_vec(len, cols, (0..len * cols).map(|i| f(i / cols, i % cols)).collect()),
            topo_indices: vec![0; len],
            meta: TrajectoryMeta { seed: 0, dt: 0.1, system_hash: 0 },
        }
    }

    #[test]
    fn sample_counts() {
        let d = build_dataset(vec![traj(1001, 1, |_, _| 0.0)], &[0], 50).unwrap();
        assert_eq!(d.len(), 950);
        let d = build_dataset(vec![traj(11, 1, |_, _| 0.0)], &[0], 10).unwrap();
        assert_eq!(d.len(), 0);
        assert!(matches!(
            build_dataset(vec![traj(10, 1, |_, _| 0.0)], &[0], 10),
            Err(TrainError::TooShort { .. })
        ));
    }

    #[test]
    fn constant_trajectory_targets_are_zero() {
        let d = build_dataset(vec![traj(30, 2, |_, c| c as f64 + 0.5)], &[0], 5).unwrap();
        for i in 0..d.len() {
            assert!(d.target(i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn windows_follow_recorded_indices() {
        let mut tr = traj(20, 1, |r, _| r as f64);
        tr.topo_indices = (0..20).map(|k| usize::from(k >= 8)).collect();
        let d = build_dataset(vec![tr.clone()], &[0], 4).unwrap();
        for i in 0..d.len() {
            let (_, t) = d.samples[i];
            let w = d.window(i);
            assert_eq!(w.indices, tr.topo_indices[t - 3..=t].to_vec());
            assert_eq!(w.next_index, tr.topo_indices[t + 1]);
            assert_eq!(w.states.row(3)[0], t as f64);
        }
    }

    #[test]
    fn nrmse_cases() {
        let truth = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 5.0], vec![1.0, 3.0]]);
        assert_eq!(nrmse(&truth, &truth).unwrap(), 0.0);
        let shifted = truth.map(|v| v + 0.5);
        let e = nrmse(&shifted, &truth).unwrap();
        assert!((e - (0.5 / 2.0 + 0.5 / 4.0) / 2.0).abs() < 1e-15);
        let flat = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(nrmse(&flat, &flat), Err(TrainError::ZeroRange(0)));
        assert_eq!(nrmse_with(&flat, &flat, true).unwrap(), 0.0);
    }

    #[test]
    fn report_statistics() {
        let r = EvalReport::from_values(vec![1.0, 3.0], vec![]);
        assert_eq!(r.mean, 2.0);
        assert_eq!(r.std, 1.0);
    }

    fn small_setup() -> (RomModel, Dataset, TopologyBank) {
        let g = Graph::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], 0).unwrap();
        let bank = TopologyBank::new(&[g], 1).unwrap();
        let tr = traj(40, 2, |r, c| (0.3 * r as f64 + c as f64).sin());
        let data = build_dataset(vec![tr], &[0], 3).unwrap();
        let mut cfg = ModelConfig::new(3, 1, 1, 2, 0.1).with_width(8);
        cfg.node_dim = 1;
        (RomModel::new(cfg, 4).unwrap(), data, bank)
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let (mut model, data, bank) = small_setup();
        let before = model.params.clone();
        let cfg = TrainConfig { epochs: 3, lr0: 0.0, ..TrainConfig::default() };
        train(&mut model, &data, &bank, &cfg).unwrap();
        assert_eq!(model.params, before);
    }

    #[test]
    fn seeded_training_is_repeatable() {
        let cfg = TrainConfig { epochs: 4, batch: 8, seed: 3, ..TrainConfig::default() };
        let (mut a, data, bank) = small_setup();
        let (mut b, _, _) = small_setup();
        let ha = train(&mut a, &data, &bank, &cfg).unwrap();
        let hb = train(&mut b, &data, &bank, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn loss_of_single_scalar_sample() {
        let g = Graph::new(1, &[], 0).unwrap();
        let bank = TopologyBank::new(&[g], 0).unwrap();
        let tr = traj(5, 1, |r, _| (r * r) as f64);
        let data = build_dataset(vec![tr], &[0], 2).unwrap();
        let mut cfg = ModelConfig::new(2, 0, 1, 1, 0.1).with_width(3);
        cfg.node_dim = 1;
        let model = RomModel::new(cfg, 1).unwrap();
        let f = model.rates(&data.window(0), &bank).unwrap()[(0, 0)];
        let target = data.target(0)[0];
        let l = loss(&model, &data, &[0], &bank).unwrap();
        assert!((l - (f - target).powi(2)).abs() < 1e-12 * l.max(1.0));
    }
}
