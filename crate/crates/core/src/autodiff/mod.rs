//! Tape-based reverse-mode differentiation and its finite-difference oracle.

pub mod gradcheck;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckOptions, GradCheckReport, TensorCheck};
pub use tape::{FaultInjection, Gradients, Tape, Var};
