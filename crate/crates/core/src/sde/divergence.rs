use nalgebra::DVector;

use super::Process;
use crate::scalar::{lit, Real};

/// `(∇·Σ)ᵢ = Σⱼ ∂Σᵢⱼ/∂xⱼ` by central differences with the default step
/// `h = 1e-4 · max(1, ‖x‖∞)`.
pub fn divergence_sigma<T: Real, P: Process<T> + ?Sized>(process: &P, x: &DVector<T>, t: T) -> DVector<T> {
    let scale = x.iter().fold(T::one(), |m, c| m.max(c.abs()));
    divergence_sigma_with_step(process, x, t, lit::<T>(1e-4) * scale)
}

/// [`divergence_sigma`] with an explicit step.
pub fn divergence_sigma_with_step<T: Real, P: Process<T> + ?Sized>(
    process: &P,
    x: &DVector<T>,
    t: T,
    h: T,
) -> DVector<T> {
    let n = x.len();
    let mut div = DVector::zeros(n);
    if process.has_constant_diffusion() {
        return div;
    }
    let two_h = h + h;
    for j in 0..n {
        // only column j of Σ(x ± h eⱼ) is needed: Σ[:, j] = σ σ[j, :]ᵀ
        let column = |sign: T| {
            let mut xs = x.clone();
            xs[j] += sign * h;
            let s = process.diffusion(t, &xs);
            &s * s.row(j).transpose()
        };
        div += (column(T::one()) - column(-T::one())) / two_h;
    }
    div
}
