//! Parameter inference on top of the simulated likelihood: variance sweeps,
//! pathwise gradients, variance MLE and diffusion means.
//!
//! Every objective here is a deterministic function of its parameters once
//! the estimator seed is fixed, so it can be differentiated exactly by
//! re-running it on [`Dual`] numbers.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::ScoreSource;
use crate::dual::Dual;
use crate::error::{check_dim, domain, Error, Result};
use crate::likelihood::{combine_log_weights, estimate_loglik, log_weights, EstimatorConfig, LogLikEstimate};
use crate::scalar::{lit, Real};
use crate::sde::{LandmarkProcess, Process, TimeGrid, VarianceFamily};
use crate::shapes::{KernelSpec, LandmarkShape};

/// Header of the sweep CSV.
pub const SWEEP_COLUMNS: [&str; 3] = ["v", "loglik", "ess"];

/// A log-likelihood curve over a variance grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: Vec<f64>,
    pub estimates: Vec<LogLikEstimate>,
    pub argmax: f64,
}

impl SweepResult {
    pub fn curve(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.loglik).collect()
    }

    pub fn argmax_index(&self) -> usize {
        argmax(&self.curve())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SWEEP_COLUMNS)?;
        for (v, e) in self.grid.iter().zip(&self.estimates) {
            w.write_record([v.to_string(), e.loglik.to_string(), e.ess.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate() {
        if x > values[best] {
            best = i;
        }
    }
    best
}

/// Estimates the log-likelihood at every `v` in `grid`, all with the same
/// seed so the curve is smooth in `v`.
pub fn loglik_sweep<P: VarianceFamily<f64> + Clone>(
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    family: &P,
    grid: &[f64],
    setup: &LikelihoodSetup,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(domain("empty variance grid"));
    }
    if grid[0] <= 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("variance grid must be positive and strictly increasing"));
    }
    let estimates = grid
        .iter()
        .map(|&v| {
            family
                .at_variance(v)
                .and_then(|p| estimate_loglik(x0, x1, &p, setup.t0, setup.t1, &setup.score, &setup.estimator))
                .map_err(|e| Error::Estimation(format!("at v = {v}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = argmax(&estimates.iter().map(|e| e.loglik).collect::<Vec<_>>());
    Ok(SweepResult { grid: grid.to_vec(), argmax: grid[best], estimates })
}

/// `n` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(domain("log grid needs 0 < lo < hi and at least two points"));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    grid[0] = lo;
    grid[n - 1] = hi;
    Ok(grid)
}

/// Time horizon, score and estimator settings shared by every objective.
#[derive(Clone, Debug)]
pub struct LikelihoodSetup {
    pub t0: f64,
    pub t1: f64,
    pub score: ScoreSource,
    pub estimator: EstimatorConfig,
}

/// A scalar function that can be evaluated on any [`Real`].
pub trait Objective: Sync {
    fn n_params(&self) -> usize;

    fn eval<S: Real>(&self, params: &[S]) -> Result<S>;
}

/// Value and exact gradient of `objective`, one dual pass per parameter.
pub fn value_and_gradient<O: Objective>(objective: &O, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(objective.n_params(), params.len())?;
    if params.is_empty() {
        return Ok((objective.eval(params)?, Vec::new()));
    }
    let mut value = f64::NAN;
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let seeded: Vec<Dual> =
            params.iter().enumerate().map(|(j, &p)| if i == j { Dual::variable(p) } else { Dual::constant(p) }).collect();
        let out = objective.eval(&seeded)?;
        if !out.eps.is_finite() {
            return Err(Error::NonFiniteGradient { index: i });
        }
        value = out.re;
        grad.push(out.eps);
    }
    Ok((value, grad))
}

/// Gradient of `objective` at `params` with its noise held fixed.
pub fn pathwise_gradient<O: Objective>(objective: &O, params: &[f64]) -> Result<Vec<f64>> {
    value_and_gradient(objective, params).map(|(_, g)| g)
}

/// Which quantities the parameter vector of a [`LoglikObjective`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamLayout {
    /// `[log v]`.
    LogVariance,
    /// `[v]`.
    Variance,
    /// The starting state `x_{t0}`.
    Start,
    /// `[v, x_{t0}…]`.
    VarianceAndStart,
}

/// `Σⱼ log p̂(xⱼ | x_{t0})` over a set of endpoints, each with its own seed.
///
/// A frozen process is re-frozen at the starting state whenever the start is
/// a parameter, so its diffusion follows the estimate.
#[derive(Clone, Debug)]
pub struct LoglikObjective {
    process: LandmarkProcess,
    start: DVector<f64>,
    targets: Vec<(DVector<f64>, u64)>,
    setup: LikelihoodSetup,
    layout: ParamLayout,
}

impl LoglikObjective {
    pub fn new(
        process: LandmarkProcess,
        start: DVector<f64>,
        target: DVector<f64>,
        setup: LikelihoodSetup,
        layout: ParamLayout,
    ) -> Result<Self> {
        let seed = setup.estimator.seed;
        Self::joint(process, start, vec![(target, seed)], setup, layout)
    }

    /// Sum over `targets`, each paired with the estimator seed it uses.
    pub fn joint(
        process: LandmarkProcess,
        start: DVector<f64>,
        targets: Vec<(DVector<f64>, u64)>,
        setup: LikelihoodSetup,
        layout: ParamLayout,
    ) -> Result<Self> {
        check_dim(process.dim(), start.len())?;
        if targets.is_empty() {
            return Err(domain("objective needs at least one endpoint"));
        }
        for (x, _) in &targets {
            check_dim(process.dim(), x.len())?;
        }
        if !(setup.t1 > setup.t0) {
            return Err(domain("need t1 > t0"));
        }
        Ok(Self { process, start, targets, setup, layout })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    /// The parameter vector describing the objective's own process and start.
    pub fn initial_params(&self) -> Vec<f64> {
        let v = self.process.kernel().variance();
        match self.layout {
            ParamLayout::LogVariance => vec![v.ln()],
            ParamLayout::Variance => vec![v],
            ParamLayout::Start => self.start.iter().copied().collect(),
            ParamLayout::VarianceAndStart => std::iter::once(v).chain(self.start.iter().copied()).collect(),
        }
    }

    fn unpack<S: Real>(&self, params: &[S]) -> (S, Option<DVector<S>>) {
        let fixed_v = || lit::<S>(self.process.kernel().variance());
        match self.layout {
            ParamLayout::LogVariance => (params[0].exp(), None),
            ParamLayout::Variance => (params[0], None),
            ParamLayout::Start => (fixed_v(), Some(DVector::from_column_slice(params))),
            ParamLayout::VarianceAndStart => (params[0], Some(DVector::from_column_slice(&params[1..]))),
        }
    }
}

impl Objective for LoglikObjective {
    fn n_params(&self) -> usize {
        match self.layout {
            ParamLayout::LogVariance | ParamLayout::Variance => 1,
            ParamLayout::Start => self.start.len(),
            ParamLayout::VarianceAndStart => self.start.len() + 1,
        }
    }

    fn eval<S: Real>(&self, params: &[S]) -> Result<S> {
        check_dim(self.n_params(), params.len())?;
        let (v, start) = self.unpack(params);
        let cast = self.process.cast::<S>();
        let kernel = KernelSpec::new(v, cast.kernel().lengthscale())?;
        let d = self.process.landmark_dim();
        let process = match (&start, self.process.frozen_state()) {
            (Some(x), Some(_)) => LandmarkProcess::frozen_at(kernel, x.clone(), d),
            _ => cast.with_variance(v)?,
        };
        let x0 = start.unwrap_or_else(|| self.start.map(lit::<S>));
        let grid = TimeGrid::new(lit::<S>(self.setup.t0), lit(self.setup.t1), self.setup.estimator.steps)?;
        let terms = self
            .targets
            .par_iter()
            .map(|(x1, seed)| {
                let config = EstimatorConfig { seed: *seed, ..self.setup.estimator.clone() };
                let w = log_weights(&x0, &x1.map(lit::<S>), &process, &grid, &self.setup.score, &config)?;
                Ok(combine_log_weights(&w)?.0)
            })
            .collect::<Result<Vec<S>>>()?;
        Ok(terms.into_iter().fold(S::zero(), |a, b| a + b))
    }
}

/// Gradient-ascent settings with Armijo backtracking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step moves the parameters less than this.
    pub tolerance: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_increase: f64,
    pub max_backtracks: usize,
    /// Draw new noise every iteration instead of keeping one noise set.
    pub fresh_noise: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            initial_step: 0.1,
            shrink: 0.5,
            sufficient_increase: 1e-4,
            max_backtracks: 40,
            fresh_noise: false,
        }
    }
}

impl OptimConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.tolerance > 0.0
            && self.initial_step > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && (0.0..1.0).contains(&self.sufficient_increase);
        if ok {
            Ok(())
        } else {
            Err(domain("invalid optimizer settings"))
        }
    }
}

/// The accepted iterates of a gradient ascent.
#[derive(Clone, Debug, PartialEq)]
pub struct Ascent {
    pub iterates: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Step length accepted into each iterate; zero for the initial point.
    pub steps: Vec<f64>,
    pub converged: bool,
}

impl Ascent {
    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("an ascent records its initial point")
    }

    /// The iterate with the largest recorded value.
    pub fn best(&self) -> (&[f64], f64) {
        let i = argmax(&self.values);
        (&self.iterates[i], self.values[i])
    }
}

fn rejectable(e: &Error) -> bool {
    matches!(e, Error::Blowup { .. } | Error::Estimation(_) | Error::Domain(_))
}

/// Armijo gradient ascent on `build(seed)`, a family of objectives indexed
/// by the noise seed of the iteration.
pub fn gradient_ascent<O: Objective>(
    build: impl Fn(u64) -> Result<O>,
    init: Vec<f64>,
    seed: u64,
    config: &OptimConfig,
) -> Result<Ascent> {
    config.validate()?;
    let mut x = init;
    let mut out = Ascent { iterates: Vec::new(), values: Vec::new(), steps: Vec::new(), converged: false };
    for k in 0..config.max_iterations {
        let objective = build(if config.fresh_noise { seed.wrapping_add(k as u64) } else { seed })?;
        let (f, g) = value_and_gradient(&objective, &x)?;
        if k == 0 {
            out.iterates.push(x.clone());
            out.values.push(f);
            out.steps.push(0.0);
        }
        let gg: f64 = g.iter().map(|c| c * c).sum();
        let mut alpha = config.initial_step;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + alpha * b).collect();
            match objective.eval(&cand) {
                Ok(fc) if fc >= f + config.sufficient_increase * alpha * gg => {
                    accepted = Some((cand, fc));
                    break;
                }
                Ok(_) => {}
                Err(e) if rejectable(&e) => {}
                Err(e) => return Err(e),
            }
            alpha *= config.shrink;
        }
        let Some((next, fc)) = accepted else {
            // no increase at any tried step: stationary to working precision
            out.converged = true;
            break;
        };
        let moved = alpha * gg.sqrt();
        x = next;
        out.iterates.push(x.clone());
        out.values.push(fc);
        out.steps.push(alpha);
        if moved < config.tolerance {
            out.converged = true;
            break;
        }
    }
    Ok(out)
}

/// Result of [`infer_variance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    pub v: f64,
    pub loglik: f64,
    pub iterations: usize,
    /// `false` when the iteration budget ran out; `v` is then the best
    /// iterate seen.
    pub converged: bool,
    pub path: Vec<f64>,
}

/// Maximises the simulated log-likelihood over `v` by gradient ascent in
/// `log v`.
pub fn infer_variance(
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    process: &LandmarkProcess,
    init_v: f64,
    setup: &LikelihoodSetup,
    config: &OptimConfig,
) -> Result<VarianceFit> {
    if !(init_v > 0.0) {
        return Err(domain(format!("initial variance must be positive, got {init_v}")));
    }
    let build = |seed: u64| {
        let setup = LikelihoodSetup { estimator: EstimatorConfig { seed, ..setup.estimator.clone() }, ..setup.clone() };
        LoglikObjective::new(process.clone(), x0.clone(), x1.clone(), setup, ParamLayout::LogVariance)
    };
    let ascent = gradient_ascent(build, vec![init_v.ln()], setup.estimator.seed, config)?;
    let (at, loglik) = if ascent.converged {
        (ascent.last(), *ascent.values.last().expect("nonempty"))
    } else {
        log::warn!("variance ascent hit {} iterations without converging", config.max_iterations);
        ascent.best()
    };
    Ok(VarianceFit {
        v: at[0].exp(),
        loglik,
        iterations: ascent.iterates.len() - 1,
        converged: ascent.converged,
        path: ascent.iterates.iter().map(|p| p[0].exp()).collect(),
    })
}

/// The iterates of [`diffusion_mean`].
#[derive(Clone, Debug, PartialEq)]
pub struct MeanTrajectory {
    pub iterates: Vec<LandmarkShape>,
    pub loglik: Vec<f64>,
    pub steps: Vec<f64>,
    pub converged: bool,
}

impl MeanTrajectory {
    pub fn last(&self) -> &LandmarkShape {
        self.iterates.last().expect("a trajectory records its initial point")
    }

    /// Columns `iteration, loglik` then `l{i}_d{j}` for landmark `i`, axis `j`.
    pub fn columns(n: usize, d: usize) -> Vec<String> {
        let mut cols = vec!["iteration".to_string(), "loglik".to_string()];
        cols.extend((0..n).flat_map(|i| (0..d).map(move |j| format!("l{i}_d{j}"))));
        cols
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let first = &self.iterates[0];
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::columns(first.n_landmarks(), first.dim()))?;
        for (k, (shape, ll)) in self.iterates.iter().zip(&self.loglik).enumerate() {
            let mut row = vec![k.to_string(), ll.to_string()];
            row.extend(shape.to_state().iter().map(|c| c.to_string()));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Settings of [`diffusion_mean`].
#[derive(Clone, Debug)]
pub struct MeanConfig {
    pub setup: LikelihoodSetup,
    pub optim: OptimConfig,
}

fn observation_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Gradient ascent of `Σ_obs log p̂(obs | x)` over the starting shape `x`.
///
/// Observations are put in a canonical order before seeds are assigned, so
/// the result does not depend on the order they are passed in.
pub fn diffusion_mean(
    observations: &[LandmarkShape],
    process: &LandmarkProcess,
    init: &LandmarkShape,
    config: &MeanConfig,
) -> Result<MeanTrajectory> {
    if observations.is_empty() {
        return Err(domain("diffusion mean needs at least one observation"));
    }
    for o in observations {
        if o.n_landmarks() != init.n_landmarks() || o.dim() != init.dim() {
            return Err(domain("observations and the initial shape must share n and d"));
        }
    }
    let mut states: Vec<DVector<f64>> = observations.iter().map(LandmarkShape::to_state).collect();
    states.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let d = init.dim();
    let build = |seed: u64| {
        let targets = states.iter().enumerate().map(|(i, s)| (s.clone(), observation_seed(seed, i))).collect();
        LoglikObjective::joint(process.clone(), init.to_state(), targets, config.setup.clone(), ParamLayout::Start)
    };
    let ascent = gradient_ascent(build, init.to_state().iter().copied().collect(), config.setup.estimator.seed, &config.optim)?;
    if !ascent.converged {
        log::warn!("diffusion mean hit {} iterations without converging", config.optim.max_iterations);
    }
    let iterates = ascent
        .iterates
        .iter()
        .map(|p| LandmarkShape::from_state(&DVector::from_column_slice(p), d))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeanTrajectory { iterates, loglik: ascent.values, steps: ascent.steps, converged: ascent.converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{log_gauss, Mode};
    use crate::shapes::{synth_shape, SynthKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup(n: usize, m: usize, seed: u64) -> LikelihoodSetup {
        LikelihoodSetup { t0: 0.0, t1: 1.0, score: ScoreSource::AnalyticBm, estimator: EstimatorConfig::new(n, m, seed) }
    }

    fn pair() -> (LandmarkProcess, DVector<f64>, DVector<f64>) {
        let shape = LandmarkShape::from_rows(&[vec![0.0, 0.0], vec![0.7, 0.1], vec![0.2, 0.6]]).unwrap();
        let p = LandmarkProcess::frozen_brownian(KernelSpec::new(0.5, 0.4).unwrap(), &shape);
        let x0 = shape.to_state();
        let x1 = &x0 + DVector::from_vec(vec![0.2, -0.3, 0.5, 0.1, -0.2, 0.3]);
        (p, x0, x1)
    }

    /// `ẑᵀẑ/k` for the reference factor `σ̂` at unit variance.
    fn closed_form_mle(p: &LandmarkProcess, x0: &DVector<f64>, x1: &DVector<f64>, t: f64) -> f64 {
        let unit = p.with_variance(1.0).unwrap();
        let s = unit.sigma(0.0, x0).into_owned();
        s.quad_form(&(x1 - x0)) / t / s.rank() as f64
    }

    struct Constant;

    impl Objective for Constant {
        fn n_params(&self) -> usize {
            3
        }

        fn eval<S: Real>(&self, _: &[S]) -> Result<S> {
            Ok(lit(4.0))
        }
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        assert_eq!(pathwise_gradient(&Constant, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn one_dimensional_mean_gradient_is_closed_form() {
        let v = 1.7;
        let p = LandmarkProcess::frozen_at(KernelSpec::new(v, 1.0).unwrap(), DVector::from_element(1, 0.3), 1);
        let (mu, x1, t) = (0.3, 1.4, 2.0);
        let mut s = setup(50, 60, 2);
        s.t1 = t;
        let obj =
            LoglikObjective::new(p, DVector::from_element(1, mu), DVector::from_element(1, x1), s, ParamLayout::Start)
                .unwrap();
        let g = pathwise_gradient(&obj, &[mu]).unwrap()[0];
        let exact = (x1 - mu) / (t * v);
        assert!((g - exact).abs() <= 1e-3 * exact.abs(), "{g} vs {exact}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (p, x0, x1) = pair();
        let obj = LoglikObjective::new(p, x0, x1, setup(20, 30, 9), ParamLayout::VarianceAndStart).unwrap();
        let params = obj.initial_params();
        let g = pathwise_gradient(&obj, &params).unwrap();
        let h = 1e-4;
        for i in 0..params.len() {
            let mut up = params.clone();
            up[i] += h;
            let mut dn = params.clone();
            dn[i] -= h;
            let fd = (obj.eval(&up).unwrap() - obj.eval(&dn).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-3 * fd.abs().max(1e-2), "param {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn single_point_sweep() {
        let (p, x0, x1) = pair();
        let r = loglik_sweep(&x0, &x1, &p, &[0.3], &setup(5, 10, 1)).unwrap();
        assert_eq!(r.argmax, 0.3);
        assert_eq!(r.estimates.len(), 1);
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let (p, x0, x1) = pair();
        let s = setup(5, 10, 1);
        assert!(loglik_sweep(&x0, &x1, &p, &[], &s).is_err());
        assert!(loglik_sweep(&x0, &x1, &p, &[0.2, 0.2], &s).is_err());
        assert!(loglik_sweep(&x0, &x1, &p, &[-1.0, 0.2], &s).is_err());
    }

    #[test]
    fn sweep_finds_the_closed_form_argmax_and_repeats_bitwise() {
        let (p, x0, x1) = pair();
        let grid = log_grid(0.05, 2.0, 15).unwrap();
        let s = setup(40, 50, 4);
        let r = loglik_sweep(&x0, &x1, &p, &grid, &s).unwrap();
        let exact: Vec<f64> = grid
            .iter()
            .map(|&v| {
                let q = p.with_variance(v).unwrap();
                log_gauss(&x1, &x0, &q.sigma(0.0, &x0), 1.0, Mode::FullGaussian, v)
            })
            .collect();
        assert!(r.argmax_index().abs_diff(argmax(&exact)) <= 1);
        let again = loglik_sweep(&x0, &x1, &p, &grid, &s).unwrap();
        assert!(r.curve().iter().zip(again.curve()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn sweep_csv_schema() {
        let (p, x0, x1) = pair();
        let r = loglik_sweep(&x0, &x1, &p, &[0.1, 0.2, 0.4], &setup(4, 8, 1)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), SWEEP_COLUMNS);
        let vs: Vec<f64> = rd.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
        assert_eq!(vs, vec![0.1, 0.2, 0.4]);
    }

    #[test]
    fn variance_fit_reaches_the_profile_mle_from_both_sides() {
        let (p, x0, x1) = pair();
        let target = closed_form_mle(&p, &x0, &x1, 1.0);
        for init in [0.1 * target, 10.0 * target] {
            let fit = infer_variance(&x0, &x1, &p, init, &setup(20, 30, 3), &OptimConfig::default()).unwrap();
            assert!(fit.converged);
            assert!((fit.v / target - 1.0).abs() < 0.02, "init {init}: {} vs {target}", fit.v);
        }
    }

    #[test]
    fn variance_fit_at_the_mle_stops_at_once() {
        let (p, x0, x1) = pair();
        let target = closed_form_mle(&p, &x0, &x1, 1.0);
        let fit = infer_variance(&x0, &x1, &p, target, &setup(20, 30, 3), &OptimConfig::default()).unwrap();
        assert!(fit.converged && fit.iterations <= 1, "{} iterations", fit.iterations);
        assert!((fit.v / target - 1.0).abs() < 1e-4);
    }

    #[test]
    fn variance_fit_flags_an_exhausted_budget() {
        let (p, x0, x1) = pair();
        let cfg = OptimConfig { max_iterations: 2, tolerance: 1e-12, ..OptimConfig::default() };
        let fit = infer_variance(&x0, &x1, &p, 0.01, &setup(5, 10, 3), &cfg).unwrap();
        assert!(!fit.converged);
        assert!(infer_variance(&x0, &x1, &p, 0.0, &setup(5, 10, 3), &cfg).is_err());
    }

    fn brownian_draws(k: usize, seed: u64) -> (LandmarkProcess, Vec<LandmarkShape>) {
        let origin = LandmarkShape::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let p = LandmarkProcess::frozen_brownian(KernelSpec::new(1.0, 1.0).unwrap(), &origin);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = (0..k)
            .map(|_| {
                let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
                LandmarkShape::from_rows(&[z]).unwrap()
            })
            .collect();
        (p, obs)
    }

    fn sample_mean(obs: &[LandmarkShape]) -> DVector<f64> {
        obs.iter().map(LandmarkShape::to_state).fold(DVector::zeros(2), |a, b| a + b) / obs.len() as f64
    }

    fn mean_config() -> MeanConfig {
        MeanConfig { setup: setup(20, 20, 8), optim: OptimConfig::default() }
    }

    #[test]
    fn diffusion_mean_finds_the_sample_mean() {
        let (p, obs) = brownian_draws(10, 21);
        let init = LandmarkShape::from_rows(&[vec![2.0, -1.5]]).unwrap();
        let traj = diffusion_mean(&obs, &p, &init, &mean_config()).unwrap();
        assert!(traj.converged);
        assert!((traj.last().to_state() - sample_mean(&obs)).norm() < 0.05);
        assert!(traj.loglik.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn diffusion_mean_of_one_observation_is_that_observation() {
        let (p, obs) = brownian_draws(1, 5);
        let init = LandmarkShape::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let traj = diffusion_mean(&obs, &p, &init, &mean_config()).unwrap();
        assert!((traj.last().to_state() - obs[0].to_state()).norm() < 0.05);
    }

    #[test]
    fn diffusion_mean_ignores_observation_order() {
        let (p, obs) = brownian_draws(4, 9);
        let init = LandmarkShape::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let a = diffusion_mean(&obs, &p, &init, &mean_config()).unwrap();
        let mut rev = obs.clone();
        rev.reverse();
        let b = diffusion_mean(&rev, &p, &init, &mean_config()).unwrap();
        assert_eq!(a.last(), b.last());
    }

    #[test]
    fn gradient_at_the_brownian_mean_is_noise_level() {
        let (p, obs) = brownian_draws(10, 21);
        let mean = sample_mean(&obs);
        let grads: Vec<Vec<f64>> = (0..5u64)
            .map(|seed| {
                let targets = obs.iter().enumerate().map(|(i, o)| (o.to_state(), observation_seed(seed, i))).collect();
                let obj =
                    LoglikObjective::joint(p.clone(), mean.clone(), targets, setup(20, 20, seed), ParamLayout::Start)
                        .unwrap();
                pathwise_gradient(&obj, mean.as_slice()).unwrap()
            })
            .collect();
        for j in 0..2 {
            let xs: Vec<f64> = grads.iter().map(|g| g[j]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            let se = sd / (xs.len() as f64).sqrt();
            assert!(m.abs() <= 3.0 * se + 1e-9, "axis {j}: mean gradient {m}, se {se}");
        }
    }

    #[test]
    fn trajectory_csv_schema() {
        let (p, obs) = brownian_draws(3, 2);
        let init = LandmarkShape::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let traj = diffusion_mean(&obs, &p, &init, &mean_config()).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["iteration", "loglik", "l0_d0", "l0_d1"]);
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), traj.iterates.len());
        assert_eq!(&rows[0][2], "0");
        assert_eq!(&rows[0][3], "1");
    }

    #[test]
    fn blob_classes_order_the_variance_argmax() {
        let base = synth_shape(SynthKind::Circle { radius: 1.0 }, 8, 0).unwrap();
        let small = |seed| synth_shape(SynthKind::Blob { radius: 1.0, amplitude: 0.03, harmonics: 3 }, 8, seed).unwrap();
        let large = |seed| synth_shape(SynthKind::Blob { radius: 1.0, amplitude: 0.3, harmonics: 3 }, 8, seed).unwrap();
        let p = LandmarkProcess::frozen_brownian(KernelSpec::new(1.0, 0.5).unwrap(), &base);
        let grid = log_grid(1e-4, 1.0, 30).unwrap();
        let s = setup(10, 40, 6);
        let (a, b, c) = (small(1).to_state(), small(2).to_state(), large(3).to_state());
        let intra = loglik_sweep(&a, &b, &p, &grid, &s).unwrap().argmax;
        let inter = loglik_sweep(&a, &c, &p, &grid, &s).unwrap().argmax;
        assert!(intra < inter, "intra {intra} vs inter {inter}");
    }
}
