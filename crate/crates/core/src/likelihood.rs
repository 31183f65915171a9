//! Importance-sampled transition densities.
//!
//! A proposal bridge path is weighted by the ratio of the target and
//! proposal Euler path densities. Only least-squares solves enter the
//! weights; log-determinants appear only in [`Mode::FullGaussian`], which
//! exists to validate the variance-profile mode against exact densities.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeSpec, GuidedBridge, ScoreSource};
use crate::error::{check_dim, domain, Error, Result};
use crate::linalg::SigmaFactor;
use crate::scalar::{count, lit, Real};
use crate::sde::{euler_maruyama, sample_noise_stream, PathSample, Process, TimeGrid};

/// How Gaussian transition densities are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exact normal log-density including normalising constants.
    FullGaussian,
    /// `−(k/2) log v − ẑᵀẑ/(2v)`: correct up to a constant in `v`, with no
    /// determinant anywhere.
    VarianceProfile,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FullGaussian => "full_gaussian",
            Self::VarianceProfile => "variance_profile",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_gaussian" => Ok(Self::FullGaussian),
            "variance_profile" => Ok(Self::VarianceProfile),
            other => Err(domain(format!("unknown mode {other:?}"))),
        }
    }
}

/// Which bridge generates the proposal paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// Forward Euler paths with the Brownian Doob drift towards `X_{t1}`.
    ForwardGuided,
    /// Reverse-time bridges driven by the configured [`ScoreSource`].
    ReverseBridge,
}

/// Settings of [`estimate_loglik`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub n_samples: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: Mode,
    pub proposal: ProposalKind,
    /// Steps next to the singular end that are bridged by one exact
    /// Gaussian transition; `None` picks [`default_guard`].
    #[serde(default)]
    pub guard_steps: Option<usize>,
    #[serde(default = "yes")]
    pub include_divergence: bool,
}

fn yes() -> bool {
    true
}

impl EstimatorConfig {
    pub fn new(n_samples: usize, steps: usize, seed: u64) -> Self {
        Self {
            n_samples,
            steps,
            seed,
            mode: Mode::FullGaussian,
            proposal: ProposalKind::ReverseBridge,
            guard_steps: None,
            include_divergence: true,
        }
    }

    pub fn guard_for(&self, dim: usize) -> usize {
        self.guard_steps.unwrap_or_else(|| default_guard(dim, self.steps)).clamp(1, self.steps.max(1))
    }
}

/// Guard band in steps: `min(max(2, dim), max(1, M/2))`.
///
/// Euler bridges mismatch the true bridge variance by a factor `1 + Δ/τ`
/// per step, so the log-weight variance grows like `dim/(2g)`. Scaling `g`
/// with the dimension keeps the weights from degenerating.
pub fn default_guard(dim: usize, steps: usize) -> usize {
    dim.max(2).min((steps / 2).max(1)).clamp(1, steps.max(1))
}

/// `zᵀz` with `σ z = residual` solved by least squares.
pub fn gauss_quad_form<T: Real>(residual: &DVector<T>, sigma: &DMatrix<T>) -> Result<T> {
    if !sigma.is_square() {
        return Err(domain("σ must be square"));
    }
    check_dim(sigma.nrows(), residual.len())?;
    Ok(SigmaFactor::dense(sigma.clone()).quad_form(residual))
}

/// `log N(x; mean, h·σσᵀ)` in the requested mode; `v` is the process
/// variance used by the profile mode.
pub fn log_gauss<T: Real>(x: &DVector<T>, mean: &DVector<T>, sigma: &SigmaFactor<T>, h: T, mode: Mode, v: T) -> T {
    let q = sigma.quad_form(&(x - mean)) / h;
    let k: T = count(sigma.rank());
    let half: T = lit(0.5);
    match mode {
        Mode::FullGaussian => {
            let two_pi: T = lit(std::f64::consts::TAU);
            -half * (k * two_pi.ln() + k * h.ln() + sigma.log_det_gram() + q)
        }
        Mode::VarianceProfile => -half * (k * v.ln() + q),
    }
}

/// Log-density of one Euler step `x → x_next` of `process` over `dt`.
pub fn log_step_density<T: Real, P: Process<T> + ?Sized>(
    x_next: &DVector<T>,
    x: &DVector<T>,
    process: &P,
    t: T,
    dt: T,
    mode: Mode,
) -> Result<T> {
    check_dim(process.dim(), x.len())?;
    check_dim(process.dim(), x_next.len())?;
    if !(dt > T::zero()) {
        return Err(domain("step size must be positive"));
    }
    let mean = x + process.drift(t, x) * dt;
    let v = process.variance().unwrap_or_else(T::one);
    let out = log_gauss(x_next, &mean, &process.sigma(t, x), dt, mode, v);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(domain("non-finite step density"))
    }
}

/// `½ Σᵢ (qᵢ* − qᵢ)` over every transition of `path`: the log ratio of the
/// base and proposal Euler densities when both share one diffusion.
pub fn importance_log_weight<T: Real, P: Process<T> + ?Sized, Q: Process<T> + ?Sized>(
    path: &PathSample<T>,
    base: &P,
    proposal: &Q,
) -> Result<T> {
    check_dim(base.dim(), path.dim())?;
    check_dim(base.dim(), proposal.dim())?;
    let grid = path.grid();
    let dt = grid.dt();
    let half: T = lit(0.5);
    let mut total = T::zero();
    for i in 0..grid.steps() {
        let t = grid.node(i);
        let (x, xn) = (path.state(i), path.state(i + 1));
        let sigma = base.sigma(t, x);
        let q = sigma.quad_form(&(xn - x - base.drift(t, x) * dt));
        let q_star = sigma.quad_form(&(xn - x - proposal.drift(t, x) * dt));
        total += half * (q_star - q) / dt;
    }
    Ok(total)
}

/// Log ratio of the base forward Euler density over the reverse-bridge
/// proposal density along a forward-ordered reverse-bridge path. Determinant
/// terms are kept only in [`Mode::FullGaussian`].
pub fn reverse_log_weight<T: Real, P: Process<T>>(path: &PathSample<T>, spec: &BridgeSpec<T, P>, mode: Mode) -> Result<T> {
    let base = spec.base();
    check_dim(base.dim(), path.dim())?;
    let grid = path.grid();
    let dt = grid.dt();
    let half: T = lit(0.5);
    let mut total = T::zero();
    let mut sigma_here = base.sigma(grid.node(0), path.state(0));
    for i in 0..grid.steps() {
        let (t, tn) = (grid.node(i), grid.node(i + 1));
        let (y, yn) = (path.state(i), path.state(i + 1));
        let sigma_next = base.sigma(tn, yn);
        let q = sigma_here.quad_form(&(yn - y - base.drift(t, y) * dt));
        let back = spec.reverse_drift_with(yn, tn, &sigma_next)?;
        let q_star = sigma_next.quad_form(&(y - yn - back * dt));
        total += half * (q_star - q) / dt;
        if mode == Mode::FullGaussian && !base.has_constant_diffusion() {
            total += half * (sigma_next.log_det_gram() - sigma_here.log_det_gram());
        }
        sigma_here = sigma_next;
    }
    Ok(total)
}

/// A simulated log-likelihood with its importance-sampling diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikEstimate {
    pub v: Option<f64>,
    pub loglik: f64,
    pub ess: f64,
    pub n_samples: usize,
    pub m_steps: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl LogLikEstimate {
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

/// Log-weights of every proposal sample, sample `i` driven by noise stream `i`.
pub fn log_weights<T: Real, P: Process<T> + Clone>(
    x0: &DVector<T>,
    x1: &DVector<T>,
    base: &P,
    grid: &TimeGrid<T>,
    score: &ScoreSource,
    config: &EstimatorConfig,
) -> Result<Vec<T>> {
    check_dim(base.dim(), x0.len())?;
    check_dim(base.dim(), x1.len())?;
    if config.n_samples == 0 {
        return Err(domain("need at least one sample"));
    }
    check_dim(config.steps, grid.steps())?;
    let m = grid.steps();
    let g = config.guard_for(base.dim());
    let dim = base.dim();
    let v = base.variance().unwrap_or_else(T::one);
    let mode = config.mode;
    let gap = grid.dt() * count(g);

    if g >= m {
        // nothing to simulate: the estimator is a single Gaussian transition
        let w = log_gauss(x1, &(x0 + base.drift(grid.t0(), x0) * gap), &base.sigma(grid.t0(), x0), gap, mode, v);
        return Ok(vec![w; config.n_samples]);
    }

    let sample = |i: usize| -> Result<T> {
        match config.proposal {
            ProposalKind::ForwardGuided => {
                let sub = grid.slice(0, m - g)?;
                let guided = GuidedBridge::new(base.clone(), x1.clone(), grid.t1())?;
                let noise = sample_noise_stream(config.seed, i as u64, &sub, dim);
                let path = euler_maruyama(&guided, x0, &sub, &noise)?;
                let w = importance_log_weight(&path, base, &guided)?;
                let (t, x) = (sub.t1(), path.terminal());
                let last = log_gauss(x1, &(x + base.drift(t, x) * gap), &base.sigma(t, x), gap, mode, v);
                Ok(w + last)
            }
            ProposalKind::ReverseBridge => {
                let spec = BridgeSpec::new(base.clone(), x0.clone(), grid.t0(), x1.clone(), grid.t1(), score.clone())?
                    .with_divergence(config.include_divergence);
                let sub = grid.slice(g, m)?;
                let noise = sample_noise_stream(config.seed, i as u64, &sub, dim);
                let path = spec.sample_reverse(&sub, &noise)?;
                let w = reverse_log_weight(&path, &spec, mode)?;
                let t0 = grid.t0();
                let first = log_gauss(path.initial(), &(x0 + base.drift(t0, x0) * gap), &base.sigma(t0, x0), gap, mode, v);
                Ok(w + first)
            }
        }
    };
    (0..config.n_samples).into_par_iter().map(sample).collect()
}

/// `log Σ exp(wᵢ) − log N` and the effective sample size, summed in sorted
/// order so the result does not depend on the order of the samples.
pub fn combine_log_weights<T: Real>(weights: &[T]) -> Result<(T, f64)> {
    if weights.is_empty() {
        return Err(domain("no weights"));
    }
    if weights.iter().any(|w| w.is_nan()) {
        return Err(Error::Estimation("NaN importance weight".into()));
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| a.primal().total_cmp(&b.primal()));
    let max = sorted[sorted.len() - 1];
    if max.primal() == f64::NEG_INFINITY || !max.is_finite() {
        return Err(Error::Estimation("all importance weights vanish".into()));
    }
    let mut sum = T::zero();
    let mut sum_sq = 0.0;
    let mut sum_primal = 0.0;
    for &w in &sorted {
        let e = (w - max).exp();
        sum += e;
        sum_primal += e.primal();
        sum_sq += e.primal() * e.primal();
    }
    let value = max + sum.ln() - count::<T>(weights.len()).ln();
    Ok((value, sum_primal * sum_primal / sum_sq))
}

/// Simulated log-likelihood of `X_{t1} = x1` given `x_{t0} = x0` under `base`.
pub fn estimate_loglik<P: Process<f64> + Clone>(
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    base: &P,
    t0: f64,
    t1: f64,
    score: &ScoreSource,
    config: &EstimatorConfig,
) -> Result<LogLikEstimate> {
    let grid = TimeGrid::new(t0, t1, config.steps)?;
    let weights = log_weights(x0, x1, base, &grid, score, config)?;
    let (loglik, ess) = combine_log_weights(&weights)?;
    Ok(LogLikEstimate {
        v: base.variance(),
        loglik,
        ess,
        n_samples: config.n_samples,
        m_steps: config.steps,
        seed: config.seed,
        mode: config.mode,
    })
}
