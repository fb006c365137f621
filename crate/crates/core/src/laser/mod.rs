//! Ground-truth channel: single-mode laser rate equations.

mod config;
mod normalize;
mod params;
mod rate;
mod simulate;
pub mod solver;

pub use config::LaserConfig;
pub use normalize::{detect_and_normalize, MinMax};
pub use params::{BiasMap, LaserParams, RateState, SolverConfig};
pub use rate::{derivatives, jacobian, relaxation_frequency, small_signal_response, steady_state};
pub use simulate::{simulate_large_signal, simulate_trajectory, Trajectory};
