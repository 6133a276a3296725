//! Exact reference computations for linear-Gaussian state-space models.

mod kalman;
mod lgss;
mod optimize;

pub use kalman::{fd_score, kalman_loglik, kalman_score, FdScore, KalmanOutput};
pub use lgss::{Binding, LgssModel, LgssSpec, Slot, Target};
pub use optimize::{reference_optimize, OptimizeOptions, Optimum};
