//! Dense `f64` matrices, a reverse-mode tape and Adam.

mod adam;
pub mod check;
mod matrix;
mod tape;

pub use adam::Adam;
pub use matrix::Matrix;
pub use tape::{BinaryKind, Gradients, ReduceKind, Tape, UnaryKind, Var, DEFAULT_CLAMP};
