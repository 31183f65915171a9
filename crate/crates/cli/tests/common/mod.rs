#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_diffbridge");

pub const COMMANDS: [&str; 8] = [
    "simulate",
    "train-score",
    "sample-bridge",
    "loglik-sweep",
    "infer-variance",
    "diffusion-mean",
    "align",
    "resample",
];

pub fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

/// Every file under `dir` by relative name.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("output directory exists") {
        let path = entry.unwrap().path();
        if path.is_file() {
            files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
        }
    }
    files
}

/// A small config exercising every command. `dir` holds the input files.
pub fn small_config(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("outline.csv"), "x,y\n0,0\n2,0\n2,1\n0,1\n").unwrap();
    std::fs::write(dir.join("obs_a.csv"), "x,y\n0.3,0.1\n").unwrap();
    std::fs::write(dir.join("obs_b.csv"), "x,y\n-0.5,0.7\n").unwrap();
    let text = r#"
seed = 11

[process]
kind = "frozen_brownian"
variance = 0.05
lengthscale = 0.4

[grid]
steps = 30

[sampler]
n_samples = 16

[shapes]
start = { kind = "circle", radius = 1.0, landmarks = 5 }
end = { kind = "blob", radius = 1.0, amplitude = 0.2, harmonics = 2, landmarks = 5, seed = 4 }

[optim]
max_iterations = 30

[simulate]
paths = 2

[train]
iterations = 4
batch_paths = 2
validation_paths = 2
eval_every = 2
hidden_outer = 8
hidden_middle = 6
hidden_inner = 4
embed_dim = 4

[sample_bridge]
paths = 2

[sweep]
v_min = 0.01
v_max = 1.0
points = 5

[infer_variance]
init_v = 0.5

[align]
reference = { kind = "circle", radius = 1.0, landmarks = 5 }
inputs = [{ kind = "ellipse", a = 2.0, b = 0.5, landmarks = 5 }]

[resample]
input = "outline.csv"
landmarks = 6

[diffusion_mean]
observations = [{ kind = "file", path = "obs_a.csv" }, { kind = "file", path = "obs_b.csv" }]
init = { kind = "file", path = "obs_a.csv" }
"#;
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}
