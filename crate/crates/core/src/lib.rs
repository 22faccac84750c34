#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Multi-waveguide pinching-antenna beamforming toolkit.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod pdd;
pub mod rates;
pub mod scenario;
pub mod ws_unicast;

pub use error::{PassError, Result};
