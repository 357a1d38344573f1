#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod archive;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod network;
pub mod reference;
pub mod report;
pub mod sampler;
pub mod solver;

pub use error::{Error, Result};
