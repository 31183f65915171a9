use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::{stable_score_loss_grad, ScoreBatch};
use super::network::{hex, Architecture, Normalisation, ScoreModel};
use crate::error::{check_dim, domain, Error, Result};
use crate::sde::{euler_maruyama, sample_noise_stream, TimeGrid, VarianceFamily};

/// Score-training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Fresh paths simulated per iteration; every increment is used.
    pub batch_paths: usize,
    pub learning_rate: f64,
    /// Cosine decay of the step size down to this value; equal to
    /// `learning_rate` for a constant step.
    pub final_learning_rate: f64,
    /// Increments this close to the start are left out of training.
    pub guard_steps: usize,
    /// Training range of the kernel variance, sampled log-uniformly.
    pub v_min: f64,
    pub v_max: f64,
    pub validation_paths: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub hidden_outer: usize,
    pub hidden_middle: usize,
    pub hidden_inner: usize,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_paths: 16,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            guard_steps: 2,
            v_min: 1.0,
            v_max: 1.0,
            validation_paths: 256,
            eval_every: 25,
            seed: 0,
            hidden_outer: 256,
            hidden_middle: 128,
            hidden_inner: 64,
            embed_dim: 32,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_paths == 0 || self.validation_paths == 0 || self.eval_every == 0 {
            return Err(domain("batch_paths, validation_paths and eval_every must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.final_learning_rate > 0.0 && self.final_learning_rate <= self.learning_rate)
        {
            return Err(domain("need 0 < final_learning_rate ≤ learning_rate"));
        }
        if !(self.v_min > 0.0 && self.v_max >= self.v_min && self.v_max.is_finite()) {
            return Err(domain("need 0 < v_min ≤ v_max"));
        }
        Ok(())
    }
}

/// One line of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedScore {
    /// Parameters with the lowest validation loss seen.
    pub model: ScoreModel,
    pub log: Vec<LossRecord>,
    pub best_iteration: usize,
    pub best_validation: f64,
}

impl TrainedScore {
    /// CSV with columns `iteration, train_loss, validation_loss`.
    pub fn write_log<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "train_loss", "validation_loss"])?;
        for r in &self.log {
            let val = r.validation_loss.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([r.iteration.to_string(), r.train_loss.to_string(), val])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(blocks: &[DMatrix<f64>], lr: f64) -> Self {
        let zeros: Vec<_> = blocks.iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, lr }
    }

    fn update(&mut self, params: &mut [DMatrix<f64>], grads: &[DMatrix<f64>]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step);
        let c2 = 1.0 - B2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
}

/// Simulates `count` paths on streams `first_stream..` and pools their
/// increments.
fn make_batch<P: VarianceFamily<f64>>(
    family: &P,
    x_start: &DVector<f64>,
    grid: &TimeGrid<f64>,
    variances: &[f64],
    seed: u64,
    first_stream: u64,
    skip: usize,
) -> Result<ScoreBatch> {
    let paths = variances
        .par_iter()
        .enumerate()
        .map(|(k, &v)| {
            let process = family.at_variance(v)?;
            let noise = sample_noise_stream(seed, first_stream + k as u64, grid, x_start.len());
            let path = euler_maruyama(&process, x_start, grid, &noise)?;
            Ok((path, process, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut batch = ScoreBatch::new();
    for (path, process, v) in &paths {
        batch.push_path(process, path, *v, skip);
    }
    Ok(batch)
}

fn batch_inputs(batch: &ScoreBatch) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let d = batch.items[0].y.len();
    let ts = batch.items.iter().map(|it| it.t).collect();
    let vs = batch.items.iter().map(|it| it.variance).collect();
    let xs = DMatrix::from_fn(d, batch.len(), |i, j| batch.items[j].y_next[i]);
    (ts, xs, vs)
}

/// Evaluates the stable loss of `model` on `batch`.
pub fn batch_loss(model: &ScoreModel, batch: &ScoreBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(domain("empty batch"));
    }
    let (ts, xs, vs) = batch_inputs(batch);
    let (out, _) = model.forward_batch(&ts, &xs, &vs)?;
    Ok(stable_score_loss_grad(&out, batch).0)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo.ln()..hi.ln()).exp()
    }
}

/// Fits `s_φ` to the forward score `∇ log p(x_t | x_start)` of `family` by
/// minimizing the stable score-matching loss over freshly simulated paths.
///
/// The network at time `τᵢ` is regressed onto targets evaluated at `Yᵢ₊₁`,
/// so it approximates the score one step later; the model records that
/// offset and [`ScoreModel::score`] corrects for it.
pub fn train_score<P: VarianceFamily<f64>>(
    family: &P,
    x_start: &DVector<f64>,
    grid: &TimeGrid<f64>,
    config: &TrainConfig,
) -> Result<TrainedScore> {
    config.validate()?;
    check_dim(family.dim(), x_start.len())?;
    if config.guard_steps >= grid.steps() {
        return Err(domain(format!("guard of {} steps leaves nothing of a {}-step grid", config.guard_steps, grid.steps())));
    }
    let d = x_start.len();
    let v_ref = family.variance().unwrap_or(1.0);
    let cov = family.covariance(grid.t0(), x_start);
    let spread = cov.trace() / (d as f64 * v_ref);
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(domain("degenerate diffusion at the start state"));
    }
    let norm = Normalisation {
        x_shift: x_start.iter().copied().collect(),
        spread,
        t0: grid.t0(),
        span: grid.span(),
        log_v_min: config.v_min.ln(),
        log_v_max: config.v_max.ln(),
        time_offset: grid.dt(),
    };
    let arch = Architecture::with_widths(d, config.hidden_outer, config.hidden_middle, config.hidden_inner, config.embed_dim);
    let mut model = ScoreModel::new(arch, norm, config.seed)?;
    model.set_fingerprint(fingerprint(config, grid, x_start));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a11);
    let val_vs: Vec<f64> = (0..config.validation_paths).map(|_| log_uniform(&mut rng, config.v_min, config.v_max)).collect();
    // validation streams live far above the training ones
    let val_batch = make_batch(family, x_start, grid, &val_vs, config.seed, 1 << 40, config.guard_steps)?;

    let mut best = model.clone();
    let mut best_validation = batch_loss(&model, &val_batch)?;
    let mut best_iteration = 0;
    let mut log = vec![LossRecord { iteration: 0, train_loss: f64::NAN, validation_loss: Some(best_validation) }];
    let mut adam = Adam::new(model.blocks(), config.learning_rate);

    for it in 1..=config.iterations {
        let vs: Vec<f64> = (0..config.batch_paths).map(|_| log_uniform(&mut rng, config.v_min, config.v_max)).collect();
        let first = ((it - 1) * config.batch_paths) as u64;
        let batch = make_batch(family, x_start, grid, &vs, config.seed, first, config.guard_steps)?;
        let (ts, xs, vs) = batch_inputs(&batch);
        let (out, tape) = model.forward_batch(&ts, &xs, &vs)?;
        let (loss, d_out) = stable_score_loss_grad(&out, &batch);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        let grads = model.backward(&tape, &d_out);
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        let progress = (it - 1) as f64 / config.iterations.max(2).saturating_sub(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.lr = config.final_learning_rate + (config.learning_rate - config.final_learning_rate) * cosine;
        adam.update(model.blocks_mut(), &grads);

        let mut record = LossRecord { iteration: it, train_loss: loss, validation_loss: None };
        if it % config.eval_every == 0 || it == config.iterations {
            let val = batch_loss(&model, &val_batch)?;
            if !val.is_finite() {
                return Err(Error::TrainingDiverged { iteration: it });
            }
            if val < best_validation {
                best_validation = val;
                best_iteration = it;
                best = model.clone();
            }
            log::debug!("score training iteration {it}: train {loss:.6}, validation {val:.6}");
            record.validation_loss = Some(val);
        }
        log.push(record);
    }
    Ok(TrainedScore { model: best, log, best_iteration, best_validation })
}

fn fingerprint(config: &TrainConfig, grid: &TimeGrid<f64>, x_start: &DVector<f64>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    for x in [grid.t0(), grid.t1(), grid.steps() as f64].iter().chain(x_start.iter()) {
        h.update(x.to_le_bytes());
    }
    hex(&h.finalize())
}
