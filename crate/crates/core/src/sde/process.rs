use std::borrow::Cow;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Result};
use crate::linalg::SigmaFactor;
use crate::scalar::Real;
use crate::shapes::{sigma_factor, KernelSpec, LandmarkShape};

/// Which landmark model a process represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProcessKind {
    /// State-dependent kernel diffusion `σ(X)`.
    Kunita,
    /// Kernel frozen at a reference shape, so `σ` is constant.
    FrozenBrownian,
    /// A guided or conditioned process built on top of one of the above.
    Bridge,
    /// Anything defined by closures.
    Custom,
}

/// An Itô diffusion `dX = f(t, X) dt + σ(t, X) dW` on a flat state vector.
///
/// `σ` is always square here, so the Wiener dimension equals [`dim`](Self::dim).
pub trait Process<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> ProcessKind;

    fn drift(&self, t: T, x: &DVector<T>) -> DVector<T>;

    /// The diffusion factor at `(t, x)`. Constant processes lend out a cached
    /// factorization instead of rebuilding it.
    fn sigma(&self, t: T, x: &DVector<T>) -> Cow<'_, SigmaFactor<T>>;

    fn diffusion(&self, t: T, x: &DVector<T>) -> DMatrix<T> {
        self.sigma(t, x).matrix()
    }

    /// `Σ = σσᵀ`.
    fn covariance(&self, t: T, x: &DVector<T>) -> DMatrix<T> {
        let s = self.diffusion(t, x);
        &s * s.transpose()
    }

    /// The scalar `v` with `σ = √v · σ̂`, when the process has one.
    fn variance(&self) -> Option<T> {
        None
    }

    fn has_constant_diffusion(&self) -> bool {
        false
    }
}

/// A process family indexed by the kernel variance `v`.
pub trait VarianceFamily<T: Real>: Process<T> + Sized {
    fn at_variance(&self, v: T) -> Result<Self>;
}

/// Landmark diffusion driven by the Gaussian kernel, with zero drift.
#[derive(Clone, Debug)]
pub struct LandmarkProcess<T: Real = f64> {
    kind: ProcessKind,
    kernel: KernelSpec<T>,
    n: usize,
    d: usize,
    frozen: Option<(DVector<T>, SigmaFactor<T>)>,
}

impl<T: Real> LandmarkProcess<T> {
    /// Kunita flow on `n` landmarks in `d` dimensions.
    pub fn kunita(kernel: KernelSpec<T>, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(domain(format!("process needs n, d ≥ 1, got n = {n}, d = {d}")));
        }
        Ok(Self { kind: ProcessKind::Kunita, kernel, n, d, frozen: None })
    }

    /// Brownian motion with the kernel frozen at `reference`.
    pub fn frozen_brownian(kernel: KernelSpec<T>, reference: &LandmarkShape<T>) -> Self {
        Self::frozen_at(kernel, reference.to_state(), reference.dim())
    }

    /// Like [`frozen_brownian`](Self::frozen_brownian) from a stacked state.
    pub fn frozen_at(kernel: KernelSpec<T>, state: DVector<T>, d: usize) -> Self {
        let factor = sigma_factor(&state, d, &kernel);
        let n = state.len() / d;
        Self { kind: ProcessKind::FrozenBrownian, kernel, n, d, frozen: Some((state, factor)) }
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn n_landmarks(&self) -> usize {
        self.n
    }

    pub fn landmark_dim(&self) -> usize {
        self.d
    }

    pub fn frozen_state(&self) -> Option<&DVector<T>> {
        self.frozen.as_ref().map(|(s, _)| s)
    }

    /// The same process with kernel variance `v`.
    pub fn with_variance(&self, v: T) -> Result<Self> {
        let kernel = self.kernel.with_variance(v)?;
        Ok(match &self.frozen {
            Some((state, _)) => Self::frozen_at(kernel, state.clone(), self.d),
            None => Self { kernel, frozen: None, ..self.clone() },
        })
    }

    /// The same process with every kernel parameter converted to `S`.
    pub fn cast<S: Real>(&self) -> LandmarkProcess<S> {
        let conv = |x: T| crate::scalar::lit::<S>(x.primal());
        let kernel = KernelSpec::new(conv(self.kernel.variance()), conv(self.kernel.lengthscale()))
            .expect("a valid kernel stays valid");
        match &self.frozen {
            Some((state, _)) => LandmarkProcess::frozen_at(kernel, state.map(conv), self.d),
            None => LandmarkProcess { kind: self.kind, kernel, n: self.n, d: self.d, frozen: None },
        }
    }
}

impl<T: Real> Process<T> for LandmarkProcess<T> {
    fn dim(&self) -> usize {
        self.n * self.d
    }

    fn kind(&self) -> ProcessKind {
        self.kind
    }

    fn drift(&self, _t: T, _x: &DVector<T>) -> DVector<T> {
        DVector::zeros(self.dim())
    }

    fn sigma(&self, _t: T, x: &DVector<T>) -> Cow<'_, SigmaFactor<T>> {
        match &self.frozen {
            Some((_, factor)) => Cow::Borrowed(factor),
            None => Cow::Owned(sigma_factor(x, self.d, &self.kernel)),
        }
    }

    fn variance(&self) -> Option<T> {
        Some(self.kernel.variance())
    }

    fn has_constant_diffusion(&self) -> bool {
        self.frozen.is_some()
    }
}

impl<T: Real> VarianceFamily<T> for LandmarkProcess<T> {
    fn at_variance(&self, v: T) -> Result<Self> {
        self.with_variance(v)
    }
}

type DriftFn<T> = dyn Fn(T, &DVector<T>) -> DVector<T> + Send + Sync;
type DiffusionFn<T> = dyn Fn(T, &DVector<T>) -> DMatrix<T> + Send + Sync;

/// A process given by drift and diffusion closures.
pub struct FnProcess<T: Real = f64> {
    dim: usize,
    drift: Box<DriftFn<T>>,
    diffusion: Box<DiffusionFn<T>>,
    constant: bool,
}

impl<T: Real> FnProcess<T> {
    pub fn new(
        dim: usize,
        drift: impl Fn(T, &DVector<T>) -> DVector<T> + Send + Sync + 'static,
        diffusion: impl Fn(T, &DVector<T>) -> DMatrix<T> + Send + Sync + 'static,
    ) -> Self {
        Self { dim, drift: Box::new(drift), diffusion: Box::new(diffusion), constant: false }
    }

    /// Marks the diffusion as state- and time-independent.
    pub fn with_constant_diffusion(mut self) -> Self {
        self.constant = true;
        self
    }
}

impl<T: Real> fmt::Debug for FnProcess<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnProcess").field("dim", &self.dim).field("constant", &self.constant).finish()
    }
}

impl<T: Real> Process<T> for FnProcess<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> ProcessKind {
        ProcessKind::Custom
    }

    fn drift(&self, t: T, x: &DVector<T>) -> DVector<T> {
        (self.drift)(t, x)
    }

    fn sigma(&self, t: T, x: &DVector<T>) -> Cow<'_, SigmaFactor<T>> {
        Cow::Owned(SigmaFactor::dense((self.diffusion)(t, x)))
    }

    fn diffusion(&self, t: T, x: &DVector<T>) -> DMatrix<T> {
        (self.diffusion)(t, x)
    }

    fn has_constant_diffusion(&self) -> bool {
        self.constant
    }
}
