use nalgebra::DVector;

use crate::error::{domain, Result};
use crate::scalar::{count, lit, Real};

/// Transformer-style sinusoidal embedding: components `2k` and `2k + 1` are
/// `sin` and `cos` of `value / 10000^(2k/dim)`.
pub fn sinusoidal_embed<T: Real>(value: T, dim: usize) -> Result<DVector<T>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(domain(format!("embedding dimension must be even and ≥ 2, got {dim}")));
    }
    let base: T = lit(10_000.0);
    let mut out = DVector::zeros(dim);
    for k in 0..dim / 2 {
        let freq = base.powf(count::<T>(2 * k) / count::<T>(dim));
        let arg = value / freq;
        out[2 * k] = arg.sin();
        out[2 * k + 1] = arg.cos();
    }
    Ok(out)
}
