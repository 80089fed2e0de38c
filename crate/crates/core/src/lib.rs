//! Coarse-grained reduced-order modeling of dynamics on graphs.
//!
//! The pipeline runs in five steps:
//!
//! 1. Simulate Kuramoto oscillators on fixed or switching topologies ([`dynamics`]).
//! 2. Coarse-grain the phases with a projection basis into group observables ([`coarsen`]).
//! 3. Estimate the interaction decay rate and plan hop count and memory length ([`mz`]).
//! 4. Train an encoder-processor-decoder network with a Chebyshev graph convolution processor
//!    on delay windows of the coarse states ([`model`], [`train`]).
//! 5. Roll the trained network out autoregressively and score it by NRMSE.
//!
//! Reverse-mode differentiation, Adam and checkpoints live in [`tensor`].

pub mod coarsen;
pub mod config;
pub mod dynamics;
pub mod experiment;
pub mod graph;
pub mod hexfloat;
pub mod io;
pub mod linalg;
pub mod model;
pub mod mz;
pub mod rng;
pub mod tensor;
pub mod train;

pub use coarsen::{CoarseMap, CoarsenError, ComplexMatrix, EtaChoice, Partition};
pub use config::{ConfigError, RunConfig};
pub use dynamics::{DynamicsError, KuramotoSystem, Schedule, Trajectory};
pub use experiment::{ExperimentData, ExperimentError, ModelSpec, SimulationConfig, Switching};
pub use graph::{Graph, GraphError, HopSets, SpectralFilter};
pub use io::IoError;
pub use linalg::Matrix;
pub use model::{ModelConfig, ModelError, RomModel, TopologyBank, Variant};
pub use mz::{ArchitecturePlan, DecayFit, MzError};
pub use tensor::{Checkpoint, Tape, TapeError};
pub use train::{EvalReport, TrainConfig, TrainError};

use thiserror::Error;

/// Any failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Coarsen(#[from] CoarsenError),
    #[error(transparent)]
    Mz(#[from] MzError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Checkpoint(#[from] tensor::CheckpointError),
}

fn graph_numeric(e: &GraphError) -> bool {
    matches!(e, GraphError::PowerIterationStalled { .. })
}

fn coarsen_numeric(e: &CoarsenError) -> bool {
    matches!(e, CoarsenError::RankDeficient(_) | CoarsenError::SingularAdmittance)
}

fn dynamics_numeric(e: &DynamicsError) -> bool {
    match e {
        DynamicsError::NonFinite { .. } => true,
        DynamicsError::Graph(g) => graph_numeric(g),
        _ => false,
    }
}

fn model_numeric(e: &ModelError) -> bool {
    match e {
        ModelError::NonFinite(_) | ModelError::Tape(TapeError::NonFiniteGradient(_)) => true,
        ModelError::Graph(g) => graph_numeric(g),
        _ => false,
    }
}

fn train_numeric(e: &TrainError) -> bool {
    match e {
        TrainError::Diverged(_) | TrainError::ZeroRange(_) | TrainError::Tape(TapeError::NonFiniteGradient(_)) => true,
        TrainError::Model(m) => model_numeric(m),
        _ => false,
    }
}

impl Error {
    /// Numerical failure at run time (divergence, non-finite values, singular systems, a decay fit
    /// with nothing to fit), as opposed to bad configuration or input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Graph(e) => graph_numeric(e),
            Error::Dynamics(e) => dynamics_numeric(e),
            Error::Coarsen(e) => coarsen_numeric(e),
            Error::Mz(e) => match e {
                MzError::Coarsen(c) => coarsen_numeric(c),
                MzError::Graph(g) => graph_numeric(g),
                MzError::BadInput(_) | MzError::TooLarge(_) | MzError::DimensionMismatch { .. } => false,
                _ => true,
            },
            Error::Tape(e) => matches!(e, TapeError::NonFiniteGradient(_)),
            Error::Model(e) => model_numeric(e),
            Error::Train(e) => train_numeric(e),
            Error::Experiment(e) => match e {
                ExperimentError::Dynamics(d) => dynamics_numeric(d),
                ExperimentError::Coarsen(c) => coarsen_numeric(c),
                ExperimentError::Model(m) => model_numeric(m),
                ExperimentError::Train(t) => train_numeric(t),
                _ => false,
            },
            Error::Config(_) | Error::Io(_) | Error::Checkpoint(_) => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
