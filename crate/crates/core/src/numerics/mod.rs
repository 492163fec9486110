//! Dense f64 matrix math with reverse-mode automatic differentiation.
//!
//! Everything trainable in this crate — the shot-embedding network, the scene
//! encoder, the probes — is expressed as a graph of matrix operations recorded
//! on a [`Tape`]. Calling [`Tape::backward`] on a scalar output walks the
//! recorded nodes in reverse and accumulates gradients for every tracked
//! input. The operation set is deliberately small: exactly what the models in
//! this crate need, each with a hand-written backward rule that is validated
//! against central differences (see [`grad_check`]).

mod gradcheck;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{avg_pool, max_pool, pooled_shape, Mat, NumericsError};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var};
