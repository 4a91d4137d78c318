//! Multi-person 3D motion capture from a single simulated camera: part
//! association, sparse 3D pose encodings, a pose decoder, kinematic
//! skeleton fitting, identity tracking and SelecSLS network accounting.

// `!(x > y)` is used on purpose where NaN must fall through, and indexed
// loops mirror the per-joint and per-DOF notation of the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod association;
pub mod decoder;
pub mod encoding;
pub mod error;
pub mod fitting;
pub mod metrics;
pub mod pipeline;
pub mod selecsls;
pub mod simulator;
pub mod skeleton;
pub mod tracking;

pub use error::{Error, Result};
