//! The scalar abstraction shared by every numerical routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::{ClosedAddAssign, ClosedDivAssign, ClosedMulAssign, ClosedSubAssign, DMatrix, Scalar};
use num_traits::{Float, FromPrimitive};

use crate::dual::Dual;
use crate::linalg::{DualSolver, LeastSquares, SvdSolver};

/// Real scalar usable throughout the crate: `f64`, `f32`, or the
/// forward-mode [`Dual`] used for pathwise gradients.
///
/// Each scalar supplies its own least-squares factorization, so that dual
/// numbers can differentiate through solves without iterating an SVD on
/// perturbed values.
pub trait Real:
    Float
    + FromPrimitive
    + Scalar
    + ClosedAddAssign
    + ClosedSubAssign
    + ClosedMulAssign
    + ClosedDivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
{
    type Solver: LeastSquares<Self>;

    fn least_squares(a: &DMatrix<Self>) -> Self::Solver;

    /// The plain floating-point value, dropping any derivative part.
    fn primal(self) -> f64;
}

impl Real for f64 {
    type Solver = SvdSolver<f64>;

    fn least_squares(a: &DMatrix<Self>) -> Self::Solver {
        SvdSolver::new(a.clone())
    }

    fn primal(self) -> f64 {
        self
    }
}

impl Real for f32 {
    type Solver = SvdSolver<f32>;

    fn least_squares(a: &DMatrix<Self>) -> Self::Solver {
        SvdSolver::new(a.clone())
    }

    fn primal(self) -> f64 {
        f64::from(self)
    }
}

impl Real for Dual {
    type Solver = DualSolver;

    fn least_squares(a: &DMatrix<Self>) -> Self::Solver {
        DualSolver::new(a)
    }

    fn primal(self) -> f64 {
        self.re
    }
}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("every Real is constructible from f64")
}

/// Converts a count into the working scalar.
#[inline]
pub fn count<T: Real>(n: usize) -> T {
    lit(n as f64)
}
