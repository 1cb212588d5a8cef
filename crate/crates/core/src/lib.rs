//! Multi-step prediction of nonlinear dynamic systems with recurrent
//! networks.
//!
//! The crate trains recurrent predictors that, given a short history of a
//! system's inputs and outputs, forecast the output trajectory many steps
//! ahead while only the future *inputs* are supplied. It provides:
//!
//! * two recurrent architectures — a multi-layer fully-connected RNN with
//!   inter-layer skip connections and a stacked memory-cell (LSTM) network
//!   with peephole connections, both behind one linear output map and an
//!   optional tapped delay line on their input/output paths
//!   ([`arch`]);
//! * three ways to put the recurrent state on the trajectory before the
//!   forecast starts: a zero-state washout warm-up, a feed-forward
//!   initialization network, and a recurrent initialization network, the
//!   latter two trained jointly with the predictor ([`init`]);
//! * gradient-based training with backpropagation through the entire
//!   unrolled sequence, including the initialization network
//!   ([`train`], [`numeric`]);
//! * a grey-box quadrotor model that wraps a rigid-body motion model
//!   between two recurrent networks and differentiates through the physics
//!   ([`hybrid`]);
//! * dataset plumbing (CSV + manifest, windowing, block-wise splits,
//!   synthetic systems) ([`data`]) and an evaluation harness (per-step
//!   error distributions, aggregate scores, model comparison)
//!   ([`eval`]).

pub mod arch;
pub mod data;
pub mod error;
pub mod eval;
pub mod hybrid;
pub mod init;
pub mod notation;
pub mod numeric;
pub mod train;

pub use error::{Error, Result};
pub use numeric::{Act, Mat};
