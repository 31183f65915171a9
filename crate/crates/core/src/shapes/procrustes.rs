use nalgebra::{DMatrix, RowDVector};

use super::LandmarkShape;
use crate::error::{Error, Result};

/// Sum of squared distances between corresponding landmarks.
pub fn procrustes_residual(a: &LandmarkShape, b: &LandmarkShape) -> f64 {
    (a.points() - b.points()).norm_squared()
}

fn centered(points: &DMatrix<f64>) -> (DMatrix<f64>, RowDVector<f64>) {
    let mean = points.row_mean();
    let mut c = points.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    (c, mean)
}

/// Ordinary Procrustes alignment of `target` onto `reference`.
///
/// Translation, uniform scale and a proper rotation (no reflection) are
/// chosen to minimize the summed squared landmark distances. Landmark order
/// is untouched.
pub fn procrustes_align(reference: &LandmarkShape, target: &LandmarkShape) -> Result<LandmarkShape> {
    if reference.points().shape() != target.points().shape() {
        return Err(Error::Alignment(format!(
            "shapes differ: {:?} vs {:?}",
            reference.points().shape(),
            target.points().shape()
        )));
    }
    let (a, mean_a) = centered(reference.points());
    let (b, _) = centered(target.points());
    let b_norm2 = b.norm_squared();
    if b_norm2 <= f64::MIN_POSITIVE || b_norm2.sqrt() <= 1e-12 * target.points().amax().max(1.0) {
        return Err(Error::Alignment("target landmarks are all coincident".into()));
    }

    let d = a.ncols();
    let svd = (b.transpose() * &a).svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut sign = DMatrix::<f64>::identity(d, d);
    if (&u * &v_t).determinant() < 0.0 {
        sign[(d - 1, d - 1)] = -1.0;
    }
    let rotation = &u * &sign * &v_t;
    let scale = (DMatrix::from_diagonal(&svd.singular_values) * &sign).trace() / b_norm2;

    let mut aligned = b * rotation * scale;
    for mut row in aligned.row_iter_mut() {
        row += &mean_a;
    }
    LandmarkShape::new(aligned)
}
