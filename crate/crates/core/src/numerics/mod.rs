//! Dense linear algebra, seeded randomness, losses and the SGD optimizer.
//!
//! Everything is 64-bit and deterministic; all operations are pure
//! functions over value types.

mod loss;
mod matrix;
mod optim;
mod rng;

pub use loss::{label_smoothed_ce, log_softmax, smoothed_ce_grad, softmax};
pub use matrix::{sherman_morrison_update, Matrix};
pub use optim::{lr_schedule, sgd_momentum_step, LrSchedule, OptimState};
pub use rng::{derive_seed, Rng};
