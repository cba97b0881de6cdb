//! Reverse-mode differentiation over the small set of operations the
//! network and its losses need.

mod checkpoint;
mod conv;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, payload_path, save_checkpoint};
pub use gradcheck::{grad_check, grad_check_fn, OpKind};
pub use optim::{Adam, Optimizer, Sgd};
pub use tape::{Gradients, PlaneOp, RunningStats, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;
