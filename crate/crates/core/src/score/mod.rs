//! Score functions: the analytic Brownian score, the stable score-matching
//! loss, and a variance-conditioned network trained on forward increments.

mod embed;
mod loss;
mod network;
mod train;

use nalgebra::DVector;

use crate::error::{check_dim, domain, Result};
use crate::linalg::SigmaFactor;
use crate::scalar::Real;

pub use embed::sinusoidal_embed;
pub use loss::{stable_score_loss, stable_score_term, ScoreBatch, ScoreItem};
pub use network::{Architecture, Normalisation, ScoreModel, BLOCK_NAMES};
pub use train::{batch_loss, train_score, LossRecord, TrainConfig, TrainedScore};

/// `∇ₓ log N(x; x_start, elapsed·Σ₀) = −(elapsed·Σ₀)⁻¹(x − x_start)`, with
/// `Σ₀ = σ₀σ₀ᵀ` applied through two least-squares solves against `σ₀`.
pub fn analytic_bm_score<T: Real>(
    x: &DVector<T>,
    x_start: &DVector<T>,
    elapsed: T,
    sigma0: &SigmaFactor<T>,
) -> Result<DVector<T>> {
    if !(elapsed > T::zero()) {
        return Err(domain(format!("score needs positive elapsed time, got {elapsed}")));
    }
    check_dim(sigma0.dim(), x.len())?;
    check_dim(x.len(), x_start.len())?;
    let z = sigma0.solve(&(x - x_start));
    Ok(sigma0.solve_transpose(&z) * (-T::one() / elapsed))
}
