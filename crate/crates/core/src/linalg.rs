//! Least-squares solves and factored diffusion matrices.
//!
//! Nothing here forms an explicit inverse. Quadratic forms `rᵀ(σσᵀ)⁻¹r` are
//! evaluated as `zᵀz` with `z` the minimum-norm least-squares solution of
//! `σ z = r`, which stays well defined when `σ` is singular.

use nalgebra::{DMatrix, DVector, RealField};

use crate::dual::Dual;
use crate::scalar::Real;

/// A factorization that answers minimum-norm least-squares queries.
pub trait LeastSquares<T>: Clone + Send + Sync + std::fmt::Debug {
    /// `argmin ‖A z − b‖` with minimal `‖z‖`.
    fn solve(&self, b: &DVector<T>) -> DVector<T>;
    /// Same query for `Aᵀ`.
    fn solve_transpose(&self, b: &DVector<T>) -> DVector<T>;
    /// `log pdet(A Aᵀ)`, the log pseudo-determinant of the Gram matrix.
    fn log_det_gram(&self) -> T;
    fn rank(&self) -> usize;
}

/// SVD-backed solver for plain floats.
#[derive(Clone, Debug)]
pub struct SvdSolver<F: RealField + Copy> {
    u: DMatrix<F>,
    singular: DVector<F>,
    v_t: DMatrix<F>,
    rank: usize,
}

impl<F: RealField + Copy> SvdSolver<F> {
    pub fn new(a: DMatrix<F>) -> Self {
        let (rows, cols) = a.shape();
        let svd = a.svd(true, true);
        let singular = svd.singular_values;
        let smax = singular.iter().copied().fold(F::zero(), |m, s| if s > m { s } else { m });
        let cutoff = smax * F::default_epsilon() * nalgebra::convert::<f64, F>(rows.max(cols) as f64);
        let rank = singular.iter().filter(|&&s| s > cutoff).count();
        Self {
            u: svd.u.expect("u requested"),
            singular,
            v_t: svd.v_t.expect("v_t requested"),
            rank,
        }
    }

    fn scaled(&self, mut c: DVector<F>) -> DVector<F> {
        for (ci, &s) in c.iter_mut().zip(self.singular.iter()) {
            *ci = if s > self.cutoff() { *ci / s } else { F::zero() };
        }
        c
    }

    fn cutoff(&self) -> F {
        let smax = self.singular.iter().copied().fold(F::zero(), |m, s| if s > m { s } else { m });
        let n = self.u.nrows().max(self.v_t.ncols());
        smax * F::default_epsilon() * nalgebra::convert::<f64, F>(n as f64)
    }

    pub fn singular_values(&self) -> &DVector<F> {
        &self.singular
    }
}

impl<F: RealField + Copy> LeastSquares<F> for SvdSolver<F> {
    fn solve(&self, b: &DVector<F>) -> DVector<F> {
        let c = self.u.tr_mul(b);
        self.v_t.tr_mul(&self.scaled(c))
    }

    fn solve_transpose(&self, b: &DVector<F>) -> DVector<F> {
        let c = &self.v_t * b;
        &self.u * self.scaled(c)
    }

    fn log_det_gram(&self) -> F {
        let cutoff = self.cutoff();
        self.singular
            .iter()
            .filter(|&&s| s > cutoff)
            .fold(F::zero(), |acc, &s| acc + s.ln() + s.ln())
    }

    fn rank(&self) -> usize {
        self.rank
    }
}

/// Solver for dual-valued matrices.
///
/// The primal part is factored once; the derivative of the pseudo-inverse
/// solution follows from the differential of `A⁺` for locally constant rank:
///
/// ```text
/// d(A⁺b) = A⁺(db − dA z) + A⁺A⁺ᵀ dAᵀ (b − A z) + (I − A⁺A) dAᵀ A⁺ᵀ z
/// ```
#[derive(Clone, Debug)]
pub struct DualSolver {
    base: SvdSolver<f64>,
    a: DMatrix<f64>,
    da: DMatrix<f64>,
}

impl DualSolver {
    pub fn new(a: &DMatrix<Dual>) -> Self {
        let re = a.map(|x| x.re);
        let da = a.map(|x| x.eps);
        Self { base: SvdSolver::new(re.clone()), a: re, da }
    }
}

fn split(b: &DVector<Dual>) -> (DVector<f64>, DVector<f64>) {
    (b.map(|x| x.re), b.map(|x| x.eps))
}

fn join(re: DVector<f64>, eps: DVector<f64>) -> DVector<Dual> {
    DVector::from_iterator(re.len(), re.iter().zip(eps.iter()).map(|(&r, &e)| Dual::new(r, e)))
}

/// Differentiated pseudo-inverse application, written against abstract
/// `solve`/`solve_t` so the transposed problem reuses it.
fn pinv_differential(
    solve: impl Fn(&DVector<f64>) -> DVector<f64>,
    solve_t: impl Fn(&DVector<f64>) -> DVector<f64>,
    a: &DMatrix<f64>,
    da: &DMatrix<f64>,
    b: &DVector<f64>,
    db: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let z = solve(b);
    let t1 = solve(&(db - da * &z));
    let resid = b - a * &z;
    let t2 = solve(&solve_t(&da.tr_mul(&resid)));
    let w = da.tr_mul(&solve_t(&z));
    let t3 = &w - solve(&(a * &w));
    (z, t1 + t2 + t3)
}

impl LeastSquares<Dual> for DualSolver {
    fn solve(&self, b: &DVector<Dual>) -> DVector<Dual> {
        let (br, db) = split(b);
        let (z, dz) = pinv_differential(
            |x| self.base.solve(x),
            |x| self.base.solve_transpose(x),
            &self.a,
            &self.da,
            &br,
            &db,
        );
        join(z, dz)
    }

    fn solve_transpose(&self, b: &DVector<Dual>) -> DVector<Dual> {
        let (br, db) = split(b);
        let (z, dz) = pinv_differential(
            |x| self.base.solve_transpose(x),
            |x| self.base.solve(x),
            &self.a.transpose(),
            &self.da.transpose(),
            &br,
            &db,
        );
        join(z, dz)
    }

    fn log_det_gram(&self) -> Dual {
        let cutoff = self.base.cutoff();
        let mut re = 0.0;
        let mut eps = 0.0;
        for (i, &s) in self.base.singular.iter().enumerate() {
            if s > cutoff {
                re += 2.0 * s.ln();
                let ds = self.base.u.column(i).dot(&(&self.da * self.base.v_t.row(i).transpose()));
                eps += 2.0 * ds / s;
            }
        }
        Dual::new(re, eps)
    }

    fn rank(&self) -> usize {
        self.base.rank
    }
}

/// A diffusion matrix `σ` together with its least-squares factorization.
///
/// Landmark kernels produce `σ = K ⊗ I_d` in the landmark-major stacking; the
/// Kronecker variant stores and factors only the `n × n` kernel matrix. Both
/// variants answer exactly the same queries.
#[derive(Clone, Debug)]
pub enum SigmaFactor<T: Real> {
    Dense { sigma: DMatrix<T>, solver: T::Solver },
    Kronecker { kernel: DMatrix<T>, solver: T::Solver, d: usize },
}

impl<T: Real> SigmaFactor<T> {
    pub fn dense(sigma: DMatrix<T>) -> Self {
        let solver = T::least_squares(&sigma);
        Self::Dense { sigma, solver }
    }

    pub fn kronecker(kernel: DMatrix<T>, d: usize) -> Self {
        let solver = T::least_squares(&kernel);
        Self::Kronecker { kernel, solver, d }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense { sigma, .. } => sigma.nrows(),
            Self::Kronecker { kernel, d, .. } => kernel.nrows() * d,
        }
    }

    /// The full `σ` matrix.
    pub fn matrix(&self) -> DMatrix<T> {
        match self {
            Self::Dense { sigma, .. } => sigma.clone(),
            Self::Kronecker { kernel, d, .. } => kron_identity(kernel, *d),
        }
    }

    /// `σ w`.
    pub fn apply(&self, w: &DVector<T>) -> DVector<T> {
        match self {
            Self::Dense { sigma, .. } => sigma * w,
            Self::Kronecker { kernel, d, .. } => per_coordinate(w, *d, |col| kernel * col),
        }
    }

    /// `σᵀ w`.
    pub fn apply_transpose(&self, w: &DVector<T>) -> DVector<T> {
        match self {
            Self::Dense { sigma, .. } => sigma.tr_mul(w),
            Self::Kronecker { kernel, d, .. } => per_coordinate(w, *d, |col| kernel.tr_mul(&col)),
        }
    }

    /// `Σ w = σσᵀ w`.
    pub fn apply_covariance(&self, w: &DVector<T>) -> DVector<T> {
        self.apply(&self.apply_transpose(w))
    }

    /// Minimum-norm least-squares solution of `σ z = r`.
    pub fn solve(&self, r: &DVector<T>) -> DVector<T> {
        match self {
            Self::Dense { solver, .. } => solver.solve(r),
            Self::Kronecker { solver, d, .. } => per_coordinate(r, *d, |col| solver.solve(&col)),
        }
    }

    /// Minimum-norm least-squares solution of `σᵀ z = r`.
    pub fn solve_transpose(&self, r: &DVector<T>) -> DVector<T> {
        match self {
            Self::Dense { solver, .. } => solver.solve_transpose(r),
            Self::Kronecker { solver, d, .. } => per_coordinate(r, *d, |col| solver.solve_transpose(&col)),
        }
    }

    /// `zᵀz` with `σ z = r` solved in the least-squares sense.
    pub fn quad_form(&self, r: &DVector<T>) -> T {
        let z = self.solve(r);
        z.dot(&z)
    }

    /// `log pdet(σσᵀ)`.
    pub fn log_det_gram(&self) -> T {
        match self {
            Self::Dense { solver, .. } => solver.log_det_gram(),
            Self::Kronecker { solver, d, .. } => solver.log_det_gram() * crate::scalar::count::<T>(*d),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            Self::Dense { solver, .. } => solver.rank(),
            Self::Kronecker { solver, d, .. } => solver.rank() * d,
        }
    }
}

/// Applies `f` to each coordinate column of a landmark-major stacked vector.
fn per_coordinate<T: Real>(
    x: &DVector<T>,
    d: usize,
    f: impl Fn(DVector<T>) -> DVector<T>,
) -> DVector<T> {
    let n = x.len() / d;
    let mut out = DVector::zeros(x.len());
    for l in 0..d {
        let col = DVector::from_iterator(n, (0..n).map(|i| x[i * d + l]));
        let y = f(col);
        for i in 0..n {
            out[i * d + l] = y[i];
        }
    }
    out
}

/// `K ⊗ I_d` in landmark-major ordering.
pub fn kron_identity<T: Real>(kernel: &DMatrix<T>, d: usize) -> DMatrix<T> {
    let n = kernel.nrows();
    let mut out = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            for l in 0..d {
                out[(i * d + l, j * d + l)] = kernel[(i, j)];
            }
        }
    }
    out
}
