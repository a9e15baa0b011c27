//! Dense-tensor math with reverse-mode gradient accumulation and Adam.
//!
//! Everything the model layers are built on: a flat row-major [`Tensor`],
//! a [`Tape`] that records forward operations and replays them backward,
//! and the [`AdamState`] optimizer. Computation is 64-bit throughout;
//! checkpoints narrow to 32-bit on disk.

mod adam;
mod gemm;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
