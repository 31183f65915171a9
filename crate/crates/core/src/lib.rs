//! Differentiable diffusion-bridge importance sampling for landmark shapes.
//!
//! Numerical code is generic over [`Real`] so that the same estimator runs
//! on `f64`, `f32` or [`Dual`] numbers; the aliases below fix `f64`.

pub mod bridge;
pub mod dual;
pub mod error;
pub mod infer;
pub mod likelihood;
pub mod linalg;
pub mod scalar;
pub mod score;
pub mod sde;
pub mod shapes;

pub use dual::Dual;
pub use error::{Error, Result};
pub use scalar::Real;

pub use bridge::ScoreSource;
pub use infer::{LikelihoodSetup, MeanTrajectory, OptimConfig, SweepResult};
pub use likelihood::{EstimatorConfig, LogLikEstimate, Mode, ProposalKind};
pub use score::ScoreModel;

pub type Shape = shapes::LandmarkShape<f64>;
pub type Kernel = shapes::KernelSpec<f64>;
pub type Landmarks = sde::LandmarkProcess<f64>;
pub type Grid = sde::TimeGrid<f64>;
pub type Path = sde::PathSample<f64>;
pub type Noise = sde::NoiseArray<f64>;
pub type Sigma = linalg::SigmaFactor<f64>;
pub type Bridge<P> = bridge::BridgeSpec<f64, P>;
