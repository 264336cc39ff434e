//! Road-network aided GNSS positioning.
//!
//! A Kalman filter tracks position, velocity and receiver clock from
//! pseudoranges, and optionally applies a second measurement update that
//! pulls the estimate towards a selected road segment. The road (and the
//! variance of that pseudo-measurement) can come from a nearest-segment
//! rule, an online Viterbi decoder, an offline bidirectional decode, or a
//! temporal graph neural network trained through the filter.

pub mod autodiff;
pub mod error;
pub mod geo;
pub mod harness;
pub mod io;
pub mod kalman;
pub mod roadnet;
pub mod selection;
pub mod sim;
pub mod tgnn;

pub use error::{Error, Result};
