//! Continuous-time IMU preintegration on local Gaussian-process trajectories.
//!
//! One preintegration window `[t_n, t_n+1]` is modeled as two local
//! temporal-GP trajectories — a white-noise-on-acceleration prior on the
//! lifted rotation variable and a white-noise-on-jerk prior on translation —
//! fitted to the raw gyro/accel samples by a two-step pre-optimization:
//! Gauss-Newton over the rotation knots, then a single linear solve over the
//! translation knots. The fitted trajectory supports constant-time queries of
//! the relative-motion pseudo-measurements, their covariance, and their bias
//! Jacobians at arbitrary interior timestamps, even when the raw gyro and
//! accel streams are mutually asynchronous.
//!
//! The crate also ships the comparators used by the benchmark harness (a
//! classical zero-order-hold discrete preintegrator and a fine-step RK4
//! ground-truth integrator), an analytic IMU simulator, and a small
//! sliding-window fusion demo that consumes asynchronous pinhole projections.

pub mod baseline;
pub mod error;
pub mod fusion;
pub mod gp;
pub mod imu;
pub mod preopt;
pub mod query;
pub mod sim;
pub mod so3;

mod block_tridiag;

pub use error::GpoError;
pub use gp::GpHyper;
pub use imu::{AccelSample, BiasState, GyroSample, ImuNoise, ProcJacobians};
pub use preopt::{KnotPolicy, PreintConfig, PreintTrajectory, RotKnot, TransKnot};
pub use query::QueryResult;
pub use so3::Rotation;
