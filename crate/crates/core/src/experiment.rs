//! End-to-end Kuramoto experiments: topology pool, trajectories, coarse observables, training and
//! evaluation, plus the parametric study over hops, delay length and coupling range.

use rayon::prelude::*;
use thiserror::Error;

use crate::coarsen::{coarse_graph, kuramoto_averaging_basis, kuramoto_coarse_interaction, CoarseMap, CoarsenError, Partition};
use crate::dynamics::{
    generate_topology_pool, random_phases, simulate, DynamicsError, KuramotoSystem, Schedule, Trajectory,
};
use crate::graph::Graph;
use crate::model::{IndexEncoding, ModelConfig, ModelError, RomModel, TopologyBank, Variant};
use crate::rng::{child_seed, SplitMix64};
use crate::train::{build_dataset, evaluate, train, EvalReport, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("empty training split")]
    EmptyTrain,
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Coarsen(#[from] CoarsenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// How topologies evolve along each trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Switching {
    /// Topology 0 throughout.
    Fixed,
    /// This many switches at random grid steps after the first `T` samples.
    Count(usize),
    /// Exponential segment lengths with this mean (seconds).
    MeanSegment(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub group_sizes: Vec<usize>,
    pub kappa: (f64, f64),
    pub omega: (f64, f64),
    pub dt: f64,
    pub horizon: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub topologies: usize,
    pub switching: Switching,
    /// Earliest grid step at which a switch may occur.
    pub min_switch_step: usize,
    /// Coarse group of every oscillator; `None` groups them by `group_sizes`.
    pub assignment: Option<Vec<usize>>,
}

impl SimulationConfig {
    /// Five groups of four oscillators, `kappa ~ U([4, 6])`, `omega ~ U([1, 15])`, fixed topology.
    pub fn desk() -> Self {
        Self {
            group_sizes: vec![4; 5],
            kappa: (4.0, 6.0),
            omega: (1.0, 15.0),
            dt: 0.01,
            horizon: 5.0,
            n_train: 20,
            n_test: 5,
            topologies: 1,
            switching: Switching::Fixed,
            min_switch_step: 0,
            assignment: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_train == 0 {
            return Err(ExperimentError::EmptyTrain);
        }
        if self.topologies == 0 {
            return Err(ExperimentError::Config("need at least one topology".into()));
        }
        if !(self.dt > 0.0) || !(self.horizon > self.dt) {
            return Err(ExperimentError::Config("need 0 < dt < horizon".into()));
        }
        if !(self.omega.0 <= self.omega.1) {
            return Err(ExperimentError::Config("omega range is inverted".into()));
        }
        if !(0.0 < self.kappa.0 && self.kappa.0 <= self.kappa.1) {
            return Err(ExperimentError::Config("need 0 < kappa_lo <= kappa_hi".into()));
        }
        if let Some(a) = &self.assignment {
            if a.len() != self.node_count() {
                return Err(ExperimentError::Config(format!(
                    "assignment has {} entries for {} oscillators",
                    a.len(),
                    self.node_count()
                )));
            }
        }
        Ok(())
    }
}

/// Simulated fine and coarse trajectories with everything needed to train on them.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub system: KuramotoSystem,
    pub map: CoarseMap,
    pub coarse_graphs: Vec<Graph>,
    pub fine_train: Vec<Trajectory>,
    pub fine_test: Vec<Trajectory>,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Coarse observable `Phi^+ x` of the embedded trajectory, one row per sample.
pub fn coarse_trajectory(fine: &Trajectory, map: &CoarseMap) -> Trajectory {
    let embedded = fine.embedded();
    let mut states = crate::linalg::Matrix::zeros(fine.len(), map.resolved_dim());
    for k in 0..fine.len() {
        states.row_mut(k).copy_from_slice(&map.phi_plus.matvec(embedded.states.row(k)));
    }
    Trajectory { states, ..fine.clone() }
}

/// Child streams of the master seed.
pub mod streams {
    pub const TOPOLOGY: u64 = 1;
    pub const OMEGA: u64 = 2;
    pub const PHASES: u64 = 1_000;
    pub const SCHEDULE: u64 = 100_000;
    pub const MODEL: u64 = 3;
    pub const TRAIN: u64 = 4;
}

/// Deterministic data generation from one master seed; trajectories `0..n_train` train,
/// the rest test.
pub fn generate_data(cfg: &SimulationConfig, seed: u64) -> Result<ExperimentData, ExperimentError> {
    cfg.validate()?;
    let n = cfg.node_count();
    let pool = generate_topology_pool(&cfg.group_sizes, cfg.kappa, cfg.topologies, child_seed(seed, streams::TOPOLOGY))?;
    let mut rng = SplitMix64::child(seed, streams::OMEGA);
    let omega: Vec<f64> = (0..n).map(|_| rng.uniform(cfg.omega.0, cfg.omega.1)).collect();
    let system = KuramotoSystem::new(omega, pool)?;
    let assignment: Vec<usize> = match &cfg.assignment {
        Some(a) => a.clone(),
        None => cfg.group_sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect(),
    };
    let partition = Partition::new(&vec![2; n], &assignment)?;
    let map = kuramoto_averaging_basis(partition.clone())?;
    let coarse_graphs = system
        .pool
        .iter()
        .map(|g| {
            let b = kuramoto_coarse_interaction(&partition, g)?;
            coarse_graph(&partition, g, &b)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let total = cfg.n_train + cfg.n_test;
    let fine: Vec<Trajectory> = (0..total)
        .into_par_iter()
        .map(|k| {
            let init = random_phases(n, child_seed(seed, streams::PHASES + k as u64));
            let mut srng = SplitMix64::child(seed, streams::SCHEDULE + k as u64);
            let schedule = match cfg.switching {
                Switching::Fixed => Schedule::fixed(0, cfg.horizon, cfg.dt),
                Switching::Count(c) => {
                    Schedule::random_switches(cfg.topologies, c, cfg.horizon, cfg.dt, cfg.min_switch_step, &mut srng)?
                }
                Switching::MeanSegment(mean) => {
                    Schedule::mean_segment(cfg.topologies, mean, cfg.horizon, cfg.dt, &mut srng)?
                }
            };
            simulate(&system, &schedule, &init, child_seed(seed, streams::PHASES + k as u64))
        })
        .collect::<Result<_, _>>()?;
    let coarse: Vec<Trajectory> = fine.iter().map(|f| coarse_trajectory(f, &map)).collect();
    let (fine_train, fine_test) = (fine[..cfg.n_train].to_vec(), fine[cfg.n_train..].to_vec());
    let (train, test) = (coarse[..cfg.n_train].to_vec(), coarse[cfg.n_train..].to_vec());
    Ok(ExperimentData { system, map, coarse_graphs, fine_train, fine_test, train, test })
}

/// `(S, N_C)` realizing a hop budget: `(2, h / 2)` for even budgets of at least 4, `(h, 1)` otherwise.
pub fn hop_architecture(hops: usize) -> (usize, usize) {
    if hops >= 4 && hops.is_multiple_of(2) {
        (2, hops / 2)
    } else {
        (hops, 1)
    }
}

/// Width used for the desk-scale benchmarks.
pub const DESK_WIDTH: usize = 64;

/// Training recipe for the desk-scale benchmarks: defaults plus input noise of 0.1 on the
/// window states, which keeps long autoregressive rollouts on the data manifold.
pub fn desk_training() -> TrainConfig {
    TrainConfig { input_noise: 0.1, ..TrainConfig::default() }
}

/// Model hyperparameters shared by a family of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub hops: usize,
    pub delay: usize,
    pub width: usize,
    pub variant: Variant,
    pub index_encoding: IndexEncoding,
}

impl ModelSpec {
    pub fn new(hops: usize, delay: usize, width: usize, variant: Variant) -> Self {
        Self { hops, delay, width, variant, index_encoding: IndexEncoding::Raw }
    }

    pub fn config(&self, nodes: usize, dt: f64) -> ModelConfig {
        let (s, nc) = hop_architecture(self.hops);
        let mut cfg = ModelConfig::new(self.delay, s, nc, nodes, dt).with_width(self.width).with_variant(self.variant);
        cfg.index_encoding = self.index_encoding;
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: RomModel,
    pub history: TrainHistory,
    pub report: EvalReport,
}

/// Train on `data.train` and evaluate rollouts on `data.test`.
pub fn run_model(
    data: &ExperimentData,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<RunResult, ExperimentError> {
    let dt = data.train.first().map_or(0.0, |t| t.meta.dt);
    let cfg = spec.config(data.coarse_graphs[0].node_count(), dt);
    let bank = TopologyBank::new(&data.coarse_graphs, cfg.order)?;
    let ids: Vec<usize> = (0..data.train.len()).collect();
    let dataset = build_dataset(data.train.clone(), &ids, cfg.delay)?;
    let mut model = RomModel::new(cfg, child_seed(seed, streams::MODEL))?;
    let tc = TrainConfig { seed: child_seed(seed, streams::TRAIN), ..train_cfg.clone() };
    let history = train(&mut model, &dataset, &bank, &tc)?;
    let report = evaluate(&model, &data.test, &bank)?;
    Ok(RunResult { model, history, report })
}

/// One cell of the study grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub hops: usize,
    pub delay: usize,
    /// Label of the coupling case (nominal `d epsilon`).
    pub d_eps: f64,
    pub kappa: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub hops: usize,
    pub delay: usize,
    pub d_eps: f64,
    pub seed: u64,
    /// Mean test NRMSE, `NaN` when the run failed.
    pub nrmse: f64,
    pub error: Option<String>,
}

/// Nominal coupling cases: `(d epsilon label, kappa range)`.
pub const COUPLING_CASES: [(f64, (f64, f64)); 3] = [(0.75, (4.0, 6.0)), (0.5, (2.0, 3.0)), (0.19, (1.0, 1.5))];

/// Full grid `hops x delays x cases`.
pub fn study_grid(hops: &[usize], delays: &[usize], cases: &[(f64, (f64, f64))]) -> Vec<StudyCell> {
    let mut cells = Vec::new();
    for &(d_eps, kappa) in cases {
        for &h in hops {
            for &t in delays {
                cells.push(StudyCell { hops: h, delay: t, d_eps, kappa });
            }
        }
    }
    cells
}

/// Every cell at every seed; failures are recorded in the row, not propagated.
pub fn run_study(
    sim: &SimulationConfig,
    cells: &[StudyCell],
    seeds: &[u64],
    width: usize,
    train_cfg: &TrainConfig,
) -> Vec<StudyRow> {
    let jobs: Vec<(&StudyCell, u64)> = cells.iter().flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    jobs.par_iter()
        .map(|&(cell, seed)| {
            let sim = SimulationConfig { kappa: cell.kappa, ..sim.clone() };
            let spec = ModelSpec::new(cell.hops, cell.delay, width, Variant::ChebConv);
            let outcome = generate_data(&sim, seed).and_then(|data| run_model(&data, &spec, train_cfg, seed));
            let (nrmse, error) = match outcome {
                Ok(r) => (r.report.mean, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            StudyRow { hops: cell.hops, delay: cell.delay, d_eps: cell.d_eps, seed, nrmse, error }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_layouts() {
        assert_eq!(hop_architecture(1), (1, 1));
        assert_eq!(hop_architecture(2), (2, 1));
        assert_eq!(hop_architecture(4), (2, 2));
    }

    #[test]
    fn generation_is_deterministic_and_split() {
        let cfg = SimulationConfig { n_train: 2, n_test: 1, horizon: 0.2, ..SimulationConfig::desk() };
        let a = generate_data(&cfg, 7).unwrap();
        let b = generate_data(&cfg, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test.len(), 1);
        assert_eq!(a.train[0].dim(), 5);
        assert_eq!(a.train[0].len(), 21);
        assert_ne!(a.train[0].states, a.train[1].states);
        let empty = SimulationConfig { n_train: 0, ..cfg };
        assert!(matches!(generate_data(&empty, 7), Err(ExperimentError::EmptyTrain)));
    }

    #[test]
    fn study_grid_shape() {
        assert_eq!(study_grid(&[2], &[10], &COUPLING_CASES[..1]).len(), 1);
        assert_eq!(study_grid(&[1, 2, 4], &[10, 20, 30, 40, 50, 75, 100], &COUPLING_CASES).len(), 63);
    }
}
