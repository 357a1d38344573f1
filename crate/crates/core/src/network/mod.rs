//! The gated network: parameters, scalar evaluation and batched evaluation
//! with input tangents.

pub mod batch;
mod kernels;
mod eval;
mod params;

pub use eval::{
    forward, forward_with, grad_wrt_inputs, initial_condition_eval, initial_condition_grad,
    EvalContext,
};
pub use params::{Dims, Gate, NetworkParams, GATES};
