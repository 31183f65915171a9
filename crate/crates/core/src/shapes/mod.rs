//! Landmark shapes, the Gaussian landmark kernel, and shape preprocessing.

mod io;
mod outline;
mod procrustes;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, domain, Result};
use crate::linalg::{kron_identity, SigmaFactor};
use crate::scalar::{lit, Real};

pub use io::{read_landmarks, read_landmarks_csv, write_landmarks, write_landmarks_csv};
pub use outline::{resample_outline, synth_shape, SynthKind};
pub use procrustes::{procrustes_align, procrustes_residual};

/// An ordered set of `n` landmarks in `d ∈ {2, 3}` dimensions.
///
/// Row `i` of [`points`](Self::points) is landmark `i`. The stacked state
/// vector used by the processes is landmark-major: `(x₁¹, …, x₁ᵈ, x₂¹, …)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkShape<T: Real = f64> {
    points: DMatrix<T>,
}

impl<T: Real> LandmarkShape<T> {
    pub fn new(points: DMatrix<T>) -> Result<Self> {
        let (n, d) = points.shape();
        if n == 0 {
            return Err(domain("a shape needs at least one landmark"));
        }
        if !(2..=3).contains(&d) {
            return Err(domain(format!("landmarks must be 2D or 3D, got {d} coordinates")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(domain("landmark coordinates must be finite"));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(domain(format!("ragged landmark rows: {} vs {d} coordinates", bad.len())));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    /// Rebuilds a shape from a landmark-major stacked state.
    pub fn from_state(state: &DVector<T>, d: usize) -> Result<Self> {
        if d == 0 || state.len() % d != 0 {
            return Err(domain(format!("state of length {} is not a multiple of d = {d}", state.len())));
        }
        let n = state.len() / d;
        Self::new(DMatrix::from_fn(n, d, |i, j| state[i * d + j]))
    }

    pub fn points(&self) -> &DMatrix<T> {
        &self.points
    }

    pub fn n_landmarks(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.points.len()
    }

    pub fn landmark(&self, i: usize) -> Vec<T> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn to_state(&self) -> DVector<T> {
        let (n, d) = self.points.shape();
        DVector::from_fn(n * d, |k, _| self.points[(k / d, k % d)])
    }
}

/// Scalar kernel parameters: variance `v` and lengthscale `κ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec<T: Real = f64> {
    variance: T,
    lengthscale: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn new(variance: T, lengthscale: T) -> Result<Self> {
        if !(variance.is_finite() && variance > T::zero()) {
            return Err(domain(format!("kernel variance must be positive, got {variance}")));
        }
        if !(lengthscale.is_finite() && lengthscale > T::zero()) {
            return Err(domain(format!("kernel lengthscale must be positive, got {lengthscale}")));
        }
        Ok(Self { variance, lengthscale })
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn lengthscale(&self) -> T {
        self.lengthscale
    }

    pub fn with_variance(&self, variance: T) -> Result<Self> {
        Self::new(variance, self.lengthscale)
    }
}

/// `k(x, y) = √v · exp(−‖x − y‖² / (2κ²))`.
pub fn kernel_eval<T: Real>(x: &[T], y: &[T], spec: &KernelSpec<T>) -> Result<T> {
    check_dim(x.len(), y.len())?;
    if x.iter().chain(y).any(|c| !c.is_finite()) {
        return Err(domain("kernel arguments must be finite"));
    }
    Ok(kernel_unchecked(x, y, spec))
}

#[inline]
pub(crate) fn kernel_unchecked<T: Real>(x: &[T], y: &[T], spec: &KernelSpec<T>) -> T {
    let sq: T = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let two: T = lit(2.0);
    spec.variance.sqrt() * (-sq / (two * spec.lengthscale * spec.lengthscale)).exp()
}

/// The `n × n` matrix of kernel values between the landmarks of a stacked state.
pub fn kernel_matrix<T: Real>(state: &DVector<T>, d: usize, spec: &KernelSpec<T>) -> DMatrix<T> {
    let n = state.len() / d;
    let slice = state.as_slice();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_unchecked(&slice[i * d..(i + 1) * d], &slice[j * d..(j + 1) * d], spec);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// The `(n·d) × (n·d)` diffusion matrix `σ` with blocks `k(xᵢ, xⱼ) I_d`.
pub fn build_sigma<T: Real>(shape: &LandmarkShape<T>, spec: &KernelSpec<T>) -> DMatrix<T> {
    kron_identity(&kernel_matrix(&shape.to_state(), shape.dim(), spec), shape.dim())
}

/// Factored form of [`build_sigma`] evaluated at a stacked state.
pub fn sigma_factor<T: Real>(state: &DVector<T>, d: usize, spec: &KernelSpec<T>) -> SigmaFactor<T> {
    SigmaFactor::kronecker(kernel_matrix(state, d, spec), d)
}
