//! Experiment configuration: one TOML file with a section per module.
//!
//! Unknown keys are rejected everywhere. Relative file paths are resolved
//! against the directory of the config file, and the resolved config written
//! next to the outputs holds absolute paths, so it re-runs from anywhere.

use std::path::{Path, PathBuf};

use diffbridge::infer::OptimConfig;
use diffbridge::score::TrainConfig;
use diffbridge::shapes::{read_landmarks_csv, synth_shape, SynthKind};
use diffbridge::{EstimatorConfig, Kernel, Landmarks, Mode, ProposalKind, Shape};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed of every random draw in the run.
    pub seed: u64,
    pub process: ProcessConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub shapes: ShapesConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_bridge: Option<SampleBridgeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infer_variance: Option<InferVarianceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_mean: Option<DiffusionMeanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample: Option<ResampleConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKindConfig {
    FrozenBrownian,
    Kunita,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub kind: ProcessKindConfig,
    pub variance: f64,
    pub lengthscale: f64,
    /// Shape the frozen kernel is evaluated at; the start shape if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ShapeSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { t0: 0.0, t1: 1.0, steps: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub mode: Mode,
    pub proposal: ProposalKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard_steps: Option<usize>,
    pub include_divergence: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            mode: Mode::FullGaussian,
            proposal: ProposalKind::ReverseBridge,
            guard_steps: None,
            include_divergence: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    /// Checkpoint of a trained network; the analytic Brownian score if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapesConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<ShapeSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<ShapeSource>,
}

/// A landmark configuration read from CSV or generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSource {
    File { path: PathBuf },
    Circle { radius: f64, landmarks: usize },
    Ellipse { a: f64, b: f64, landmarks: usize },
    Blob { radius: f64, amplitude: f64, harmonics: usize, landmarks: usize, seed: u64 },
}

impl ShapeSource {
    pub fn load(&self) -> Result<Shape, CliError> {
        let shape = match self {
            Self::File { path } => read_landmarks_csv(path).map_err(|e| CliError::input(path, e))?,
            Self::Circle { radius, landmarks } => synth_shape(SynthKind::Circle { radius: *radius }, *landmarks, 0)?,
            Self::Ellipse { a, b, landmarks } => synth_shape(SynthKind::Ellipse { a: *a, b: *b }, *landmarks, 0)?,
            Self::Blob { radius, amplitude, harmonics, landmarks, seed } => synth_shape(
                SynthKind::Blob { radius: *radius, amplitude: *amplitude, harmonics: *harmonics },
                *landmarks,
                *seed,
            )?,
        };
        Ok(shape)
    }

    fn resolve(&mut self, base: &Path) {
        if let Self::File { path } = self {
            *path = absolute(base, path);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub paths: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { paths: 4 }
    }
}

/// Score-training settings; the seed comes from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_paths: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub guard_steps: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub validation_paths: usize,
    pub eval_every: usize,
    pub hidden_outer: usize,
    pub hidden_middle: usize,
    pub hidden_inner: usize,
    pub embed_dim: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            iterations: d.iterations,
            batch_paths: d.batch_paths,
            learning_rate: d.learning_rate,
            final_learning_rate: d.final_learning_rate,
            guard_steps: d.guard_steps,
            v_min: d.v_min,
            v_max: d.v_max,
            validation_paths: d.validation_paths,
            eval_every: d.eval_every,
            hidden_outer: d.hidden_outer,
            hidden_middle: d.hidden_middle,
            hidden_inner: d.hidden_inner,
            embed_dim: d.embed_dim,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_paths: self.batch_paths,
            learning_rate: self.learning_rate,
            final_learning_rate: self.final_learning_rate,
            guard_steps: self.guard_steps,
            v_min: self.v_min,
            v_max: self.v_max,
            validation_paths: self.validation_paths,
            eval_every: self.eval_every,
            seed,
            hidden_outer: self.hidden_outer,
            hidden_middle: self.hidden_middle,
            hidden_inner: self.hidden_inner,
            embed_dim: self.embed_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleBridgeConfig {
    pub paths: usize,
}

impl Default for SampleBridgeConfig {
    fn default() -> Self {
        Self { paths: 4 }
    }
}

/// Either an explicit grid or `points` log-spaced values in `[v_min, v_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl SweepConfig {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match (&self.grid, self.v_min, self.v_max, self.points) {
            (Some(g), None, None, None) => Ok(g.clone()),
            (None, Some(lo), Some(hi), Some(n)) => Ok(diffbridge::infer::log_grid(lo, hi, n)?),
            _ => Err(CliError::Config("[sweep] needs either `grid` or all of `v_min`, `v_max`, `points`".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferVarianceConfig {
    pub init_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionMeanConfig {
    pub observations: Vec<ShapeSource>,
    pub init: ShapeSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    pub reference: ShapeSource,
    pub inputs: Vec<ShapeSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleConfig {
    /// Closed polyline, one vertex per row.
    pub input: PathBuf,
    pub landmarks: usize,
}

fn absolute(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` and makes every file reference absolute.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let mut config = Self::parse(&text)?;
        let base = std::fs::canonicalize(path)
            .map_err(|e| CliError::input(path, e))?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        config.resolve_paths(&base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let mut sources: Vec<&mut ShapeSource> = Vec::new();
        sources.extend(self.process.reference.as_mut());
        sources.extend(self.shapes.start.as_mut());
        sources.extend(self.shapes.end.as_mut());
        if let Some(m) = self.diffusion_mean.as_mut() {
            sources.extend(m.observations.iter_mut());
            sources.push(&mut m.init);
        }
        if let Some(a) = self.align.as_mut() {
            sources.push(&mut a.reference);
            sources.extend(a.inputs.iter_mut());
        }
        for s in sources {
            s.resolve(base);
        }
        if let Some(model) = self.score.model.as_mut() {
            *model = absolute(base, model);
        }
        if let Some(r) = self.resample.as_mut() {
            r.input = absolute(base, &r.input);
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            n_samples: self.sampler.n_samples,
            steps: self.grid.steps,
            seed: self.seed,
            mode: self.sampler.mode,
            proposal: self.sampler.proposal,
            guard_steps: self.sampler.guard_steps,
            include_divergence: self.sampler.include_divergence,
        }
    }

    pub fn start(&self) -> Result<Shape, CliError> {
        self.shapes.start.as_ref().ok_or_else(|| CliError::missing("shapes.start"))?.load()
    }

    pub fn end(&self) -> Result<Shape, CliError> {
        self.shapes.end.as_ref().ok_or_else(|| CliError::missing("shapes.end"))?.load()
    }

    /// The configured process; a frozen kernel sits at `process.reference`,
    /// or at `fallback` when no reference is given.
    pub fn process(&self, fallback: &Shape) -> Result<Landmarks, CliError> {
        let kernel = Kernel::new(self.process.variance, self.process.lengthscale)?;
        Ok(match self.process.kind {
            ProcessKindConfig::FrozenBrownian => {
                let reference = match &self.process.reference {
                    Some(src) => src.load()?,
                    None => fallback.clone(),
                };
                if reference.points().shape() != fallback.points().shape() {
                    return Err(CliError::Config("process.reference must match the data shape".into()));
                }
                Landmarks::frozen_brownian(kernel, &reference)
            }
            ProcessKindConfig::Kunita => Landmarks::kunita(kernel, fallback.n_landmarks(), fallback.dim())?,
        })
    }
}
