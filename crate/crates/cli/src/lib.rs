//! Reproducible experiments over the `diffbridge` library.
//!
//! Each command reads one [`ExperimentConfig`], writes its outputs plus the
//! resolved config and tool version into an output directory, and is
//! deterministic given the config.

pub mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::ValueEnum;
use diffbridge::bridge::{BridgeSpec, ScoreSource};
use diffbridge::infer::{diffusion_mean, infer_variance, loglik_sweep, LikelihoodSetup, MeanConfig};
use diffbridge::score::{train_score, ScoreModel};
use diffbridge::sde::{euler_maruyama, sample_noise_stream, Process};
use diffbridge::shapes::{procrustes_align, procrustes_residual, resample_outline, write_landmarks};
use diffbridge::{Grid, Landmarks};
use nalgebra::DMatrix;
use serde::Serialize;

pub use config::ExperimentConfig;

/// Name of the resolved config inside an output directory.
pub const RESOLVED_CONFIG: &str = "config.toml";
pub const VERSION_FILE: &str = "VERSION";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum)]
pub enum Command {
    Simulate,
    TrainScore,
    SampleBridge,
    LoglikSweep,
    InferVariance,
    DiffusionMean,
    Align,
    Resample,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Input { path: PathBuf, message: String },
    Core(diffbridge::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn input(path: &Path, e: impl fmt::Display) -> Self {
        Self::Input { path: path.to_path_buf(), message: e.to_string() }
    }

    pub fn missing(key: &str) -> Self {
        Self::Config(format!("missing `{key}`"))
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Input { .. } => "input",
            Self::Core(_) => "numerical",
            Self::Io(_) => "io",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Report { error: self.kind(), message: self.to_string() })
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "invalid config: {m}"),
            Self::Input { path, message } => write!(f, "{}: {message}", path.display()),
            Self::Core(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<diffbridge::Error> for CliError {
    fn from(e: diffbridge::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// Optional command-line overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<diffbridge::Mode>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mode) = self.mode {
            config.sampler.mode = mode;
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(diffbridge::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn score_source(config: &ExperimentConfig) -> Result<ScoreSource, CliError> {
    Ok(match &config.score.model {
        Some(path) => ScoreSource::Learned(Arc::new(ScoreModel::load(path).map_err(|e| CliError::input(path, e))?)),
        None => ScoreSource::AnalyticBm,
    })
}

fn setup(config: &ExperimentConfig) -> Result<LikelihoodSetup, CliError> {
    Ok(LikelihoodSetup {
        t0: config.grid.t0,
        t1: config.grid.t1,
        score: score_source(config)?,
        estimator: config.estimator(),
    })
}

fn grid(config: &ExperimentConfig) -> Result<Grid, CliError> {
    Ok(Grid::new(config.grid.t0, config.grid.t1, config.grid.steps)?)
}

/// Runs `command` and writes everything into `out`.
pub fn run(command: Command, config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    fs::write(out.join(RESOLVED_CONFIG), config.to_toml()?)?;
    fs::write(out.join(VERSION_FILE), format!("diffbridge {}\n", env!("CARGO_PKG_VERSION")))?;
    match command {
        Command::Simulate => simulate(config, out),
        Command::TrainScore => train(config, out),
        Command::SampleBridge => sample_bridge(config, out),
        Command::LoglikSweep => sweep(config, out),
        Command::InferVariance => variance(config, out),
        Command::DiffusionMean => mean(config, out),
        Command::Align => align(config, out),
        Command::Resample => resample(config, out),
    }
}

fn simulate(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.simulate.clone().unwrap_or_default();
    let start = config.start()?;
    let process = config.process(&start)?;
    let grid = grid(config)?;
    let x0 = start.to_state();
    for i in 0..section.paths {
        let noise = sample_noise_stream(config.seed, i as u64, &grid, process.dim());
        let path = euler_maruyama(&process, &x0, &grid, &noise)?;
        let mut w = create(out, &format!("path_{i:03}.csv"))?;
        path.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn train(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.train.clone().ok_or_else(|| CliError::missing("[train]"))?;
    let start = config.start()?;
    let process = config.process(&start)?;
    let trained = train_score(&process, &start.to_state(), &grid(config)?, &section.to_config(config.seed))?;
    trained.model.save(out.join("model.json"))?;
    let mut w = create(out, "loss.csv")?;
    trained.write_log(&mut w)?;
    w.flush()?;
    #[derive(Serialize)]
    struct Summary {
        best_iteration: usize,
        best_validation: f64,
        fingerprint: String,
    }
    write_json(
        out,
        "train_summary.json",
        &Summary {
            best_iteration: trained.best_iteration,
            best_validation: trained.best_validation,
            fingerprint: trained.model.fingerprint().to_string(),
        },
    )
}

fn sample_bridge(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.sample_bridge.clone().unwrap_or_default();
    let (start, end) = (config.start()?, config.end()?);
    let process = config.process(&start)?;
    let grid = grid(config)?;
    let guard = config.estimator().guard_for(process.dim());
    let sub = BridgeSpec::<f64, Landmarks>::reverse_grid(&grid, guard)?;
    let spec = BridgeSpec::new(process, start.to_state(), grid.t0(), end.to_state(), grid.t1(), score_source(config)?)?
        .with_divergence(config.sampler.include_divergence);
    for i in 0..section.paths {
        let noise = sample_noise_stream(config.seed, i as u64, &sub, start.state_dim());
        let path = spec.sample_reverse(&sub, &noise)?;
        let mut w = create(out, &format!("bridge_{i:03}.csv"))?;
        path.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn sweep(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.sweep.clone().ok_or_else(|| CliError::missing("[sweep]"))?;
    let (start, end) = (config.start()?, config.end()?);
    let process = config.process(&start)?;
    let result = loglik_sweep(&start.to_state(), &end.to_state(), &process, &section.values()?, &setup(config)?)?;
    let mut w = create(out, "sweep.csv")?;
    result.write_csv(&mut w)?;
    w.flush()?;
    write_json(out, "sweep.json", &result)
}

fn variance(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.infer_variance.clone().ok_or_else(|| CliError::missing("[infer_variance]"))?;
    let (start, end) = (config.start()?, config.end()?);
    let process = config.process(&start)?;
    let fit = infer_variance(&start.to_state(), &end.to_state(), &process, section.init_v, &setup(config)?, &config.optim)?;
    write_json(out, "variance.json", &fit)
}

fn mean(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.diffusion_mean.clone().ok_or_else(|| CliError::missing("[diffusion_mean]"))?;
    let observations = section.observations.iter().map(|s| s.load()).collect::<Result<Vec<_>, _>>()?;
    let init = section.init.load()?;
    let process = config.process(&init)?;
    let traj = diffusion_mean(&observations, &process, &init, &MeanConfig { setup: setup(config)?, optim: config.optim.clone() })?;
    let mut w = create(out, "trajectory.csv")?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(out, "mean.csv")?;
    write_landmarks(traj.last(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn align(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.align.clone().ok_or_else(|| CliError::missing("[align]"))?;
    let reference = section.reference.load()?;
    let mut residuals = csv::Writer::from_writer(create(out, "residuals.csv")?);
    residuals.write_record(["index", "residual"]).map_err(diffbridge::Error::from)?;
    for (i, src) in section.inputs.iter().enumerate() {
        let aligned = procrustes_align(&reference, &src.load()?)?;
        let mut w = create(out, &format!("aligned_{i:03}.csv"))?;
        write_landmarks(&aligned, &mut w)?;
        w.flush()?;
        residuals
            .write_record([i.to_string(), procrustes_residual(&reference, &aligned).to_string()])
            .map_err(diffbridge::Error::from)?;
    }
    residuals.flush()?;
    Ok(())
}

fn resample(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.resample.clone().ok_or_else(|| CliError::missing("[resample]"))?;
    let outline = diffbridge::shapes::read_landmarks_csv(&section.input).map_err(|e| CliError::input(&section.input, e))?;
    let polyline: DMatrix<f64> = outline.points().clone();
    let shape = resample_outline(&polyline, section.landmarks)?;
    let mut w = create(out, "landmarks.csv")?;
    write_landmarks(&shape, &mut w)?;
    w.flush()?;
    Ok(())
}

