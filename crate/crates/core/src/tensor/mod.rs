//! Dense tensors, reverse-mode differentiation and the numeric kernels the
//! network layers are built from.

pub mod gradcheck;
pub mod kernels;
mod ops;
pub mod param;
pub mod storage;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_many, grad_check_params, relative_error, GradCheckReport, GRAD_FLOOR};
pub use ops::{gelu, sigmoid};
pub use param::{ParamBuilder, ParamId, ParamStore, Parameter, Session};
pub use storage::{DType, Element, Float, Tensor};
pub use tape::{Gradients, Tape, Var};
