//! Diffusion bridges: the reverse-time bridge driven by a score, and the
//! forward guided bridge used as an analytic proposal.
//!
//! The reverse bridge starts at the conditioning endpoint `X_{t1}` and runs
//! back towards `x_{t0}`. Its drift uses the forward score
//! `∇ log p(x_t | x_{t0})` with the elapsed time `t − t0`, so the singular end
//! of the drift sits at `t0`. Simulation stops a guard band short of it; the
//! likelihood module closes the gap with one exact Gaussian transition.

use std::borrow::Cow;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{check_dim, domain, Error, Result};
use crate::linalg::SigmaFactor;
use crate::scalar::{lit, Real};
use crate::score::ScoreModel;
use crate::sde::{divergence_sigma, NoiseArray, PathSample, Process, ProcessKind, TimeGrid};

/// Where the score in the reverse drift comes from.
#[derive(Clone, Debug)]
pub enum ScoreSource {
    /// Brownian score with the diffusion frozen at `x_{t0}`. The product
    /// `Σ·score` is taken in closed form as `−(x − x_{t0}) / (t − t0)`.
    AnalyticBm,
    Learned(Arc<ScoreModel>),
}

/// A bridge of `base` from `x_{t0}` at `t0` to `X_{t1}` at `t1`.
#[derive(Clone, Debug)]
pub struct BridgeSpec<T: Real, P> {
    base: P,
    x_start: DVector<T>,
    t0: T,
    x_end: DVector<T>,
    t1: T,
    score: ScoreSource,
    include_divergence: bool,
}

impl<T: Real, P: Process<T>> BridgeSpec<T, P> {
    pub fn new(base: P, x_start: DVector<T>, t0: T, x_end: DVector<T>, t1: T, score: ScoreSource) -> Result<Self> {
        check_dim(base.dim(), x_start.len())?;
        check_dim(base.dim(), x_end.len())?;
        if !(t1 > t0) {
            return Err(domain(format!("bridge needs t1 > t0, got [{t0}, {t1}]")));
        }
        if let ScoreSource::Learned(model) = &score {
            check_dim(base.dim(), model.state_dim())?;
        }
        Ok(Self { base, x_start, t0, x_end, t1, score, include_divergence: true })
    }

    /// Switches the `∇·Σ` term on or off.
    pub fn with_divergence(mut self, include: bool) -> Self {
        self.include_divergence = include;
        self
    }

    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn x_start(&self) -> &DVector<T> {
        &self.x_start
    }

    pub fn x_end(&self) -> &DVector<T> {
        &self.x_end
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn t1(&self) -> T {
        self.t1
    }

    pub fn score(&self) -> &ScoreSource {
        &self.score
    }

    /// Drift of the reverse-time bridge in reverse-time coordinates, at
    /// forward time `t` and state `x`:
    /// `−f(x, t) + Σ(x, t)·∇ log p(x | x_{t0}) + ∇·Σ(x, t)`.
    pub fn reverse_drift(&self, x: &DVector<T>, t: T) -> Result<DVector<T>> {
        self.reverse_drift_with(x, t, &self.base.sigma(t, x))
    }

    pub(crate) fn reverse_drift_with(&self, x: &DVector<T>, t: T, sigma: &SigmaFactor<T>) -> Result<DVector<T>> {
        check_dim(self.base.dim(), x.len())?;
        let elapsed = t - self.t0;
        if !(elapsed > T::zero()) || t > self.t1 {
            return Err(domain(format!("reverse drift evaluated at t = {t} outside ({}, {}]", self.t0, self.t1)));
        }
        let pull = match &self.score {
            ScoreSource::AnalyticBm => (x - &self.x_start) * (-T::one() / elapsed),
            ScoreSource::Learned(model) => {
                let v = self.base.variance().unwrap_or_else(T::one);
                sigma.apply_covariance(&model.score(elapsed, x, v)?)
            }
        };
        let mut drift = pull - self.base.drift(t, x);
        if self.include_divergence && !self.base.has_constant_diffusion() {
            drift += divergence_sigma(&self.base, x, t);
        }
        Ok(drift)
    }

    /// The sub-grid `[τ_g, t1]` a reverse bridge is simulated on.
    pub fn reverse_grid(grid: &TimeGrid<T>, guard_steps: usize) -> Result<TimeGrid<T>> {
        if guard_steps == 0 || guard_steps > grid.steps() {
            return Err(domain(format!("guard of {guard_steps} steps on a {}-step grid", grid.steps())));
        }
        if guard_steps == grid.steps() {
            // nothing to simulate: a degenerate one-node grid is not
            // representable, so callers handle this case without a path
            return Err(domain("guard band covers the whole grid"));
        }
        grid.slice(guard_steps, grid.steps())
    }

    /// Simulates the reverse bridge from `X_{t1}` with explicit Euler steps
    /// on `grid` (typically [`reverse_grid`](Self::reverse_grid)), consuming
    /// `noise` from its first increment. The result is in forward time order:
    /// the last state is `X_{t1}` exactly, the first lies near `x_{t0}`.
    pub fn sample_reverse(&self, grid: &TimeGrid<T>, noise: &NoiseArray<T>) -> Result<PathSample<T>> {
        check_dim(grid.steps(), noise.steps())?;
        check_dim(self.base.dim(), noise.dim())?;
        if grid.t1() != self.t1 || grid.t0() <= self.t0 {
            return Err(domain("reverse grid must end at t1 and stay clear of t0"));
        }
        let m = grid.steps();
        let dt = grid.dt();
        let mut states = vec![DVector::zeros(0); m + 1];
        states[m] = self.x_end.clone();
        for k in 0..m {
            let i = m - k;
            let t = grid.node(i);
            let y = &states[i];
            let sigma = self.base.sigma(t, y);
            let next = y + self.reverse_drift_with(y, t, &sigma)? * dt + sigma.apply(noise.increment(k));
            if next.iter().any(|c| !c.is_finite()) {
                return Err(Error::Blowup { step: k + 1 });
            }
            states[i - 1] = next;
        }
        PathSample::new(states, *grid)
    }
}

/// Doob drift of a Brownian bridge to `target` at `t1`: `(target − x)/(t1 − t)`.
pub fn forward_bm_bridge_drift<T: Real>(x: &DVector<T>, t: T, target: &DVector<T>, t1: T) -> Result<DVector<T>> {
    check_dim(target.len(), x.len())?;
    if !(t < t1) {
        return Err(domain(format!("forward bridge drift needs t < t1, got t = {t}, t1 = {t1}")));
    }
    Ok((target - x) / (t1 - t))
}

/// The base process with the Brownian Doob drift added: a guided proposal
/// that hits `target` at `t1` and shares the base diffusion.
#[derive(Clone, Debug)]
pub struct GuidedBridge<T: Real, P> {
    base: P,
    target: DVector<T>,
    t1: T,
}

impl<T: Real, P: Process<T>> GuidedBridge<T, P> {
    pub fn new(base: P, target: DVector<T>, t1: T) -> Result<Self> {
        check_dim(base.dim(), target.len())?;
        Ok(Self { base, target, t1 })
    }

    pub fn base(&self) -> &P {
        &self.base
    }
}

impl<T: Real, P: Process<T>> Process<T> for GuidedBridge<T, P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn kind(&self) -> ProcessKind {
        ProcessKind::Bridge
    }

    fn drift(&self, t: T, x: &DVector<T>) -> DVector<T> {
        // callers never step from t1 itself; clamp keeps the map total
        let tau = (self.t1 - t).max(lit(1e-300));
        self.base.drift(t, x) + (&self.target - x) / tau
    }

    fn sigma(&self, t: T, x: &DVector<T>) -> Cow<'_, SigmaFactor<T>> {
        self.base.sigma(t, x)
    }

    fn variance(&self) -> Option<T> {
        self.base.variance()
    }

    fn has_constant_diffusion(&self) -> bool {
        self.base.has_constant_diffusion()
    }
}
