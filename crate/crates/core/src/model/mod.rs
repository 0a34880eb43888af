//! The student network, its autodiff tape, EMA tracking and checkpoints.

pub mod checkpoint;
pub mod ema;
pub mod mlp;
pub mod network;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use ema::{ema_update, EmaState};
pub use mlp::{Activation, Mlp};
pub use network::{loss_gradient, Architecture, CtmNetwork, CtmParams, CtmView, TapeNet};
pub use tape::{Tape, Var};
