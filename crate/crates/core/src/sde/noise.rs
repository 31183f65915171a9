use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TimeGrid;
use crate::scalar::{lit, Real};

/// Pre-drawn Wiener increments, one `N(0, Δ I)` vector per grid step.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseArray<T: Real = f64> {
    increments: Vec<DVector<T>>,
    seed: u64,
    stream: u64,
}

impl<T: Real> NoiseArray<T> {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn dim(&self) -> usize {
        self.increments.first().map_or(0, DVector::len)
    }

    pub fn increment(&self, i: usize) -> &DVector<T> {
        &self.increments[i]
    }

    pub fn increments(&self) -> &[DVector<T>] {
        &self.increments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

/// Draws the increments for `grid` in dimension `dim`. Bit-identical for a
/// fixed `(seed, grid, dim)`.
pub fn sample_noise<T: Real>(seed: u64, grid: &TimeGrid<T>, dim: usize) -> NoiseArray<T> {
    sample_noise_stream(seed, 0, grid, dim)
}

/// Like [`sample_noise`], drawing from an independent ChaCha stream so that
/// sample `i` of a Monte-Carlo batch does not depend on the batch size.
pub fn sample_noise_stream<T: Real>(seed: u64, stream: u64, grid: &TimeGrid<T>, dim: usize) -> NoiseArray<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let scale = grid.dt().primal().sqrt();
    let increments = (0..grid.steps())
        .map(|_| {
            DVector::from_fn(dim, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                lit(z * scale)
            })
        })
        .collect();
    NoiseArray { increments, seed, stream }
}
