//! Long-term 3D human motion forecasting via keyposes.
//!
//! A motion sequence is compressed to keyposes (frames from which the
//! rest of the sequence can be linearly interpolated within an error
//! threshold), the keyposes are clustered into a label vocabulary, a
//! recurrent classifier predicts future label/duration pairs, and the
//! forecast sequence is rebuilt by interpolating the corresponding
//! cluster centers. The crate also ships the evaluation metrics (MPJPE,
//! PSKL, diversity), a synthetic-motion test harness and a stage-by-stage
//! pipeline used by the `keypose` CLI.

// `!(x > 0.0)` deliberately rejects NaN; the numeric kernels index
// several buffers in lockstep
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cluster;
pub mod config;
pub mod error;
pub mod extract;
pub mod io;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod pose;
pub mod predict;
pub mod rng;
pub mod synth;
pub mod token;

pub use error::{Error, Result};
pub use pose::{MotionSequence, Pose};
pub use rng::RngState;
