use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use super::{NoiseArray, Process, TimeGrid};
use crate::error::{check_dim, domain, Error, Result};
use crate::scalar::Real;

/// A discretized path: one state per grid node, in forward time order.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample<T: Real = f64> {
    states: Vec<DVector<T>>,
    grid: TimeGrid<T>,
}

impl<T: Real> PathSample<T> {
    pub fn new(states: Vec<DVector<T>>, grid: TimeGrid<T>) -> Result<Self> {
        if states.len() != grid.steps() + 1 {
            return Err(domain(format!("{} states for a grid of {} steps", states.len(), grid.steps())));
        }
        let dim = states[0].len();
        for (i, s) in states.iter().enumerate() {
            check_dim(dim, s.len())?;
            if s.iter().any(|c| !c.is_finite()) {
                return Err(Error::Blowup { step: i });
            }
        }
        Ok(Self { states, grid })
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &DVector<T> {
        &self.states[i]
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn initial(&self) -> &DVector<T> {
        &self.states[0]
    }

    pub fn terminal(&self) -> &DVector<T> {
        &self.states[self.states.len() - 1]
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn into_states(self) -> Vec<DVector<T>> {
        self.states
    }

    /// CSV with columns `t, x1, …, x_dim`, one row per node.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (i, s) in self.states.iter().enumerate() {
            let mut row = vec![self.grid.node(i).primal().to_string()];
            row.extend(s.iter().map(|c| c.primal().to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Reads back a path written by [`PathSample::write_csv`].
pub fn read_path_csv(path: impl AsRef<Path>) -> Result<PathSample<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| domain(format!("bad number {f:?}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() < 2 {
            return Err(domain("path rows need a time and at least one coordinate"));
        }
        times.push(vals[0]);
        states.push(DVector::from_vec(vals[1..].to_vec()));
    }
    if times.len() < 2 {
        return Err(domain("a path needs at least two rows"));
    }
    let grid = TimeGrid::new(times[0], times[times.len() - 1], times.len() - 1)?;
    PathSample::new(states, grid)
}

/// Fixed-noise Euler–Maruyama:
/// `X_{i+1} = X_i + f(τᵢ, X_i) Δ + σ(τᵢ, X_i) wᵢ`.
///
/// The path is a smooth function of the process parameters and `x0` once the
/// noise is fixed.
pub fn euler_maruyama<T: Real, P: Process<T> + ?Sized>(
    process: &P,
    x0: &DVector<T>,
    grid: &TimeGrid<T>,
    noise: &NoiseArray<T>,
) -> Result<PathSample<T>> {
    check_dim(process.dim(), x0.len())?;
    check_dim(grid.steps(), noise.steps())?;
    check_dim(process.dim(), noise.dim())?;
    if x0.iter().any(|c| !c.is_finite()) {
        return Err(Error::Blowup { step: 0 });
    }
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(x0.clone());
    for i in 0..grid.steps() {
        let t = grid.node(i);
        let x = &states[i];
        let next = x + process.drift(t, x) * dt + process.sigma(t, x).apply(noise.increment(i));
        if next.iter().any(|c| !c.is_finite()) {
            return Err(Error::Blowup { step: i + 1 });
        }
        states.push(next);
    }
    Ok(PathSample { states, grid: *grid })
}
