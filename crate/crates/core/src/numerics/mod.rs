//! Dense tensors, a reverse-mode tape, and the optimiser.

mod gradcheck;
mod init;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use init::{gaussian_from, init_gaussian};
pub use optim::{adam_step, lr_at, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{log_sigmoid, sigmoid, Tensor};
