//! Score network, autodiff tape, losses and optimizer.

pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod optim;
pub mod tape;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use loss::{LossKind, LossReport};
pub use net::{time_embed, NetConfig, ScoreNet, StepTerm};
pub use optim::AdamW;
pub use tape::{Tape, Tensor, Var};
