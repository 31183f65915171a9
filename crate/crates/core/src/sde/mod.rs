//! Landmark processes and fixed-noise Euler–Maruyama simulation.
//!
//! Noise is drawn up front and stored, so a path is a deterministic, smooth
//! function of the process parameters and the initial state. Re-running a
//! simulation with the same [`NoiseArray`] and dual-valued parameters
//! differentiates the path.

mod divergence;
mod grid;
mod noise;
mod process;
mod simulate;

pub use divergence::{divergence_sigma, divergence_sigma_with_step};
pub use grid::TimeGrid;
pub use noise::{sample_noise, sample_noise_stream, NoiseArray};
pub use process::{FnProcess, LandmarkProcess, Process, ProcessKind, VarianceFamily};
pub use simulate::{euler_maruyama, read_path_csv, PathSample};
