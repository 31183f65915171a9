use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, domain, Result};
use crate::sde::{PathSample, Process};

/// One Euler increment `(τᵢ, Yᵢ, Yᵢ₊₁)` with the quantities the loss needs.
#[derive(Clone, Debug)]
pub struct ScoreItem {
    pub t: f64,
    pub y: DVector<f64>,
    pub y_next: DVector<f64>,
    pub dt: f64,
    pub drift: DVector<f64>,
    /// `Σ(τᵢ, Yᵢ)`, not yet multiplied by `Δt`.
    pub cov: Arc<DMatrix<f64>>,
    /// Kernel variance of the path this item came from.
    pub variance: f64,
}

impl ScoreItem {
    /// `Yᵢ₊₁ − Yᵢ − f Δt`.
    pub fn residual(&self) -> DVector<f64> {
        &self.y_next - &self.y - &self.drift * self.dt
    }

    /// The per-item regression target `−(ΔtΣ)⁻¹ v` (least-squares solve).
    pub fn target(&self) -> DVector<f64> {
        let step_cov = self.cov.as_ref() * self.dt;
        let solver = nalgebra::linalg::SVD::new(step_cov, true, true);
        let eps = f64::EPSILON * self.cov.nrows() as f64 * solver.singular_values.max();
        -solver.solve(&self.residual(), eps).expect("SVD has both factors")
    }
}

/// Increments pooled from `n_paths` simulated paths.
#[derive(Clone, Debug, Default)]
pub struct ScoreBatch {
    pub items: Vec<ScoreItem>,
    pub n_paths: usize,
}

impl ScoreBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Adds every increment of `path` except the first `skip` ones, whose
    /// targets sit too close to the start to be useful.
    pub fn push_path<P: Process<f64> + ?Sized>(
        &mut self,
        process: &P,
        path: &PathSample<f64>,
        variance: f64,
        skip: usize,
    ) {
        let grid = path.grid();
        let dt = grid.dt();
        let states = path.states();
        let mut constant: Option<Arc<DMatrix<f64>>> = None;
        for i in skip.min(grid.steps())..grid.steps() {
            let t = grid.node(i);
            let cov = if process.has_constant_diffusion() {
                constant.get_or_insert_with(|| Arc::new(process.covariance(t, &states[i]))).clone()
            } else {
                Arc::new(process.covariance(t, &states[i]))
            };
            self.items.push(ScoreItem {
                t,
                y: states[i].clone(),
                y_next: states[i + 1].clone(),
                dt,
                drift: process.drift(t, &states[i]),
                cov,
                variance,
            });
        }
        self.n_paths += 1;
    }
}

/// `pᵀΣp + 2pᵀv`: the part of `‖p + Σ⁻¹v‖²_Σ` that depends on `p`.
pub fn stable_score_term(p: &DVector<f64>, v: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    (cov * p).dot(p) + 2.0 * p.dot(v)
}

/// `(1/N) Σⱼ Σᵢ Δt (pᵀ(ΔtΣ)p + 2pᵀv)` with `v = Yᵢ₊₁ − Yᵢ − fΔt`.
///
/// No inverse of `Σ` appears, yet this differs from the direct regression
/// objective `(1/N) ΣΣ Δt ‖p + (ΔtΣ)⁻¹v‖²_{ΔtΣ}` only by a constant in `p`.
pub fn stable_score_loss(preds: &[DVector<f64>], batch: &ScoreBatch) -> Result<f64> {
    if batch.is_empty() || batch.n_paths == 0 {
        return Err(domain("score loss needs a nonempty batch"));
    }
    check_dim(batch.len(), preds.len())?;
    let mut total = 0.0;
    for (p, item) in preds.iter().zip(&batch.items) {
        check_dim(item.y.len(), p.len())?;
        let step_cov = item.cov.as_ref() * item.dt;
        total += item.dt * stable_score_term(p, &item.residual(), &step_cov);
    }
    Ok(total / batch.n_paths as f64)
}

/// Loss and its gradient with respect to `preds`, one column per item.
pub(crate) fn stable_score_loss_grad(preds: &DMatrix<f64>, batch: &ScoreBatch) -> (f64, DMatrix<f64>) {
    let scale = 1.0 / batch.n_paths as f64;
    let mut grad = DMatrix::zeros(preds.nrows(), preds.ncols());
    let mut total = 0.0;
    for (c, item) in batch.items.iter().enumerate() {
        let p = preds.column(c);
        let v = item.residual();
        let sp = item.cov.as_ref() * p * item.dt;
        total += item.dt * (sp.dot(&p) + 2.0 * p.dot(&v));
        grad.set_column(c, &((sp + v) * (2.0 * item.dt * scale)));
    }
    (total * scale, grad)
}
