#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod diffusion;
pub mod distributions;
pub mod error;
pub mod flow;
pub mod guidance;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod receiver;
pub mod rng;
pub mod score;

pub use error::{Error, Result};
