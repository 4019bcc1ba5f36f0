//! Dense `f64` tensors, tape-based reverse-mode autodiff, seeded init and ADAM.

mod adam;
pub mod gradcheck;
mod init;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use init::{init_with, rng_from_seed, seeded_init, InitScheme, SeededRng};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

