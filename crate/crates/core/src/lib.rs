//! Hierarchical over-the-air gradient aggregation with a UAV parameter server.
//!
//! The UAV flies a closed, speed-limited path over `N` slots. In each slot the
//! devices within the coverage radius transmit their normalized gradients at
//! full power and the channel superimposes them; after the flight the UAV
//! combines the `N` partial aggregates with real weights `ζ` and reconstructs
//! an estimate of the global gradient.
//!
//! The crate covers the whole chain:
//!
//! * [`scenario`]: device layouts, channel and UAV parameters, baseline paths.
//! * [`geometry`]: trajectories, coverage, the LoS channel and the gain matrix `K`.
//! * [`airphy`]: the signal-level simulation of one aggregation round.
//! * [`mse`]: the analytic aggregation MSE, its closed-form optimal weights,
//!   and a Monte-Carlo oracle.
//! * [`sca`], [`subproblem`], [`optimizer`]: the slack/tangent relaxation, the
//!   convex trajectory subproblem, and the alternating optimizer.
//! * [`baseline`]: static parameter server and tuned circular trajectories.
//! * [`learning`]: a federated-learning harness on desk-scale tasks.
//!
//! Everything is `no_std` + `alloc`; file formats and the command line live in
//! the companion `uavfl` crate.
#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod airphy;
pub mod baseline;
mod error;
pub mod geometry;
pub mod learning;
mod linalg;
pub mod mse;
pub mod optimizer;
pub mod rng;
pub mod sca;
pub mod scenario;
pub mod subproblem;

pub use error::{Error, Result};
pub use geometry::{GainMatrix, Trajectory};
pub use scenario::{ChannelParams, OptimizerParams, Point, Scenario, UavParams};

/// Summation that is insensitive to the order partial results arrive in, up to
/// rounding of the order `log2(n) * eps`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
