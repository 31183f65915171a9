use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LandmarkShape;
use crate::error::{domain, Result};

/// Resamples a closed polyline to `n` points equally spaced in arc length,
/// starting at the first vertex. Rows of `polyline` are vertices.
pub fn resample_outline(polyline: &DMatrix<f64>, n: usize) -> Result<LandmarkShape> {
    let (m, d) = polyline.shape();
    if n == 0 {
        return Err(domain("cannot resample to zero landmarks"));
    }
    if m < 2 {
        return Err(domain("an outline needs at least two vertices"));
    }
    let vertex = |i: usize| polyline.row(i % m);
    let seg_len: Vec<f64> = (0..m).map(|i| (vertex(i + 1) - vertex(i)).norm()).collect();
    let total: f64 = seg_len.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(domain("outline has zero total arc length"));
    }

    let mut out = DMatrix::zeros(n, d);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..n {
        let target = total * k as f64 / n as f64;
        while seg + 1 < m && seg_start + seg_len[seg] <= target {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let frac = if seg_len[seg] > 0.0 { (target - seg_start) / seg_len[seg] } else { 0.0 };
        let p = vertex(seg) + (vertex(seg + 1) - vertex(seg)) * frac;
        out.row_mut(k).copy_from(&p);
    }
    LandmarkShape::new(out)
}

/// Synthetic closed 2D outlines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthKind {
    Circle { radius: f64 },
    Ellipse { a: f64, b: f64 },
    /// A circle with a seeded low-frequency radial perturbation.
    /// `amplitude` bounds the relative radial deviation and must be below 0.5.
    Blob { radius: f64, amplitude: f64, harmonics: usize },
}

/// Generates `n` landmarks at uniform angles `2πk/n`. Deterministic in `seed`;
/// the seed only matters for blobs.
pub fn synth_shape(kind: SynthKind, n: usize, seed: u64) -> Result<LandmarkShape> {
    if n < 3 {
        return Err(domain("synthetic outlines need at least 3 landmarks"));
    }
    let angle = |k: usize| TAU * k as f64 / n as f64;
    let points = match kind {
        SynthKind::Circle { radius } => DMatrix::from_fn(n, 2, |k, j| {
            let (s, c) = angle(k).sin_cos();
            radius * if j == 0 { c } else { s }
        }),
        SynthKind::Ellipse { a, b } => DMatrix::from_fn(n, 2, |k, j| {
            let (s, c) = angle(k).sin_cos();
            if j == 0 {
                a * c
            } else {
                b * s
            }
        }),
        SynthKind::Blob { radius, amplitude, harmonics } => {
            if !(0.0..0.5).contains(&amplitude) {
                return Err(domain("blob amplitude must lie in [0, 0.5)"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let terms: Vec<(f64, f64, f64)> = (0..harmonics)
                .map(|h| {
                    let freq = (h + 2) as f64;
                    let amp = rng.random_range(-1.0..1.0) * amplitude / (h + 1) as f64;
                    (freq, amp, rng.random_range(0.0..TAU))
                })
                .collect();
            let norm: f64 = (1..=harmonics).map(|h| 1.0 / h as f64).sum::<f64>().max(1.0);
            DMatrix::from_fn(n, 2, |k, j| {
                let theta = angle(k);
                let bump: f64 = terms.iter().map(|&(f, a, p)| a * (f * theta + p).cos()).sum();
                let r = radius * (1.0 + bump / norm);
                r * if j == 0 { theta.cos() } else { theta.sin() }
            })
        }
    };
    LandmarkShape::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    }

    #[test]
    fn square_quartiles_are_corners() {
        let s = resample_outline(&unit_square(), 4).unwrap();
        assert!((s.points() - unit_square()).amax() < 1e-12);
    }

    #[test]
    fn square_octiles_add_midpoints() {
        let s = resample_outline(&unit_square(), 8).unwrap();
        let expected = DMatrix::from_row_slice(
            8,
            2,
            &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0, 1.0, 0.5, 1.0, 1.0, 0.5, 1.0, 0.0, 1.0, 0.0, 0.5],
        );
        assert!((s.points() - expected).amax() < 1e-12);
    }

    #[test]
    fn fine_circle_resamples_evenly() {
        let fine = synth_shape(SynthKind::Circle { radius: 1.0 }, 1000, 0).unwrap();
        let s = resample_outline(fine.points(), 100).unwrap();
        let angles: Vec<f64> = (0..100).map(|k| s.points()[(k, 1)].atan2(s.points()[(k, 0)])).collect();
        for k in 0..100 {
            let r = s.points().row(k).norm();
            assert!((r - 1.0).abs() <= 1e-3);
            let gap = (angles[(k + 1) % 100] - angles[k]).rem_euclid(TAU);
            assert!((gap - TAU / 100.0).abs() <= 1e-2);
        }
    }

    #[test]
    fn resample_rejects_degenerate() {
        assert!(resample_outline(&DMatrix::from_element(3, 2, 1.0), 5).is_err());
        assert!(resample_outline(&DMatrix::from_row_slice(1, 2, &[0.0, 0.0]), 5).is_err());
    }

    #[test]
    fn circle_quadrants() {
        let c = synth_shape(SynthKind::Circle { radius: 1.0 }, 4, 0).unwrap();
        let expected = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        assert!((c.points() - expected).amax() < 1e-15);
    }

    #[test]
    fn ellipse_points_on_curve() {
        let e = synth_shape(SynthKind::Ellipse { a: 2.0, b: 1.0 }, 100, 0).unwrap();
        for row in e.points().row_iter() {
            assert!(((row[0] / 2.0).powi(2) + row[1].powi(2) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn blob_is_deterministic_and_star_shaped() {
        let kind = SynthKind::Blob { radius: 1.0, amplitude: 0.3, harmonics: 4 };
        let a = synth_shape(kind, 50, 9).unwrap();
        assert_eq!(a, synth_shape(kind, 50, 9).unwrap());
        assert_ne!(a, synth_shape(kind, 50, 10).unwrap());
        for row in a.points().row_iter() {
            let r = row.norm();
            assert!(r > 0.5 && r < 1.5);
        }
        assert!(synth_shape(kind, 2, 0).is_err());
    }
}
