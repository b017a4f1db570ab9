//! Dense arrays with tape-based reverse-mode differentiation.
//!
//! Values live on a [`Tape`]; every primitive appends one node holding its
//! output and whatever it needs for the backward pass. [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients into the leaves.
//!
//! There is no general broadcasting: binary elementwise ops accept equal
//! shapes or one scalar operand. Row-wise bias and scaling have dedicated
//! primitives ([`Tape::bias_add`], [`Tape::row_scale`]).

mod check;
mod error;
mod kernels;
mod ops;
pub mod random;
mod rules;
pub mod suite;
mod tape;
mod tensor;

pub use check::{grad_check, rel_err, GradCheckOptions, GradCheckReport};
pub use error::{DiffError, Result};
pub use kernels::ConvGeom;
pub use ops::{conv_out_len, Conv2dSpec};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
