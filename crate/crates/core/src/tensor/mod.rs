//! Dense reverse-mode differentiation, fully connected layers and the optimizer.

pub mod checkpoint;
pub mod nn;
pub mod optim;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use nn::{fan_in_uniform, fcnn, Dense, Fcnn, ParamStore, PRELU_INIT};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use tape::{Gradients, NodeMix, Tape, TapeError, Var};
