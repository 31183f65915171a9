use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::sinusoidal_embed;
use crate::error::{check_dim, domain, Error, Result};
use crate::scalar::{lit, Real};

/// Layer widths and embedding size of the score network.
///
/// The hidden widths must be mirror-symmetric (`[a, b, c, b, a]`) so the
/// skip connections from the down-sizing layers can be added element-wise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub state_dim: usize,
    pub hidden: [usize; 5],
    pub embed_dim: usize,
    pub activation: String,
}

impl Architecture {
    pub fn new(state_dim: usize) -> Self {
        Self::with_widths(state_dim, 256, 128, 64, 32)
    }

    pub fn with_widths(state_dim: usize, outer: usize, middle: usize, inner: usize, embed_dim: usize) -> Self {
        Self {
            state_dim,
            hidden: [outer, middle, inner, middle, outer],
            embed_dim,
            activation: "silu".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let [a, b, c, b2, a2] = self.hidden;
        if self.state_dim == 0 || a == 0 || b == 0 || c == 0 || a != a2 || b != b2 {
            return Err(Error::Checkpoint(format!("unsupported architecture {:?}", self.hidden)));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 || self.activation != "silu" {
            return Err(Error::Checkpoint("embedding must be even and activation silu".into()));
        }
        Ok(())
    }

    /// Shapes of the parameter blocks, in storage order.
    fn block_shapes(&self) -> Vec<(usize, usize)> {
        let [a, b, c, _, _] = self.hidden;
        let (d, e) = (self.state_dim, self.embed_dim);
        vec![
            (a, d + 1), (a, 1), (a, e), (a, e),
            (b, a), (b, 1), (b, e), (b, e),
            (c, b), (c, 1), (c, e), (c, e),
            (b, c), (b, 1),
            (a, b), (a, 1),
            (d, a), (d, 1),
        ]
    }
}

/// Names of the parameter blocks, in storage order.
pub const BLOCK_NAMES: [&str; 18] = [
    "w1", "b1", "scale1", "shift1", "w2", "b2", "scale2", "shift2", "w3", "b3", "scale3", "shift3", "w4", "b4",
    "w5", "b5", "w_out", "b_out",
];

/// Fixed input and output scalings.
///
/// States enter as `(x − x_shift) / √(span·v·spread)` and time as
/// `(t − t0) / span`. The raw network output is multiplied by
/// `1 / √(elapsed·v·spread)`, the natural size of a diffusion score, so the
/// layers only have to learn an O(1) field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalisation {
    pub x_shift: Vec<f64>,
    /// Mean diagonal of the unit-variance covariance at `x_shift`.
    pub spread: f64,
    pub t0: f64,
    pub span: f64,
    pub log_v_min: f64,
    pub log_v_max: f64,
    /// The network queried at time `τ` approximates the score at `τ + time_offset`.
    pub time_offset: f64,
}

impl Normalisation {
    fn validate(&self, state_dim: usize) -> Result<()> {
        if self.x_shift.len() != state_dim {
            return Err(Error::Checkpoint(format!("x_shift has {} entries, expected {state_dim}", self.x_shift.len())));
        }
        let ok = self.spread > 0.0
            && self.span > 0.0
            && self.time_offset >= 0.0
            && self.log_v_max >= self.log_v_min
            && self.x_shift.iter().chain([&self.t0, &self.log_v_min, &self.log_v_max]).all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint("invalid normalisation constants".into()))
        }
    }

    /// `(log v − log v_min) / (log v_max − log v_min)`, or 0 for a single variance.
    pub fn normalised_log_variance<S: Real>(&self, v: S) -> S {
        let width = self.log_v_max - self.log_v_min;
        if width <= 0.0 {
            S::zero()
        } else {
            (v.ln() - lit(self.log_v_min)) / lit(width)
        }
    }
}

/// Feed-forward score approximator `s_φ(t, x; v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreModel {
    arch: Architecture,
    norm: Normalisation,
    blocks: Vec<DMatrix<f64>>,
    fingerprint: String,
}

/// Activations kept for backpropagation, one column per item.
pub(crate) struct Tape {
    emb: DMatrix<f64>,
    input: DMatrix<f64>,
    // per conditioned layer: pre-modulation affine output, modulation factor, pre-activation
    cond: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
    h: Vec<DMatrix<f64>>,
    z4: DMatrix<f64>,
    z5: DMatrix<f64>,
    out_scale: DVector<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu<S: Real>(z: S) -> S {
    z / (S::one() + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// `W x + b` with the weights promoted to `S`.
fn affine<S: Real>(w: &DMatrix<f64>, b: &DMatrix<f64>, x: &[S]) -> Vec<S> {
    let mut out: Vec<S> = b.iter().map(|&v| lit(v)).collect();
    for (c, &xc) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.column(c).iter()) {
            *o += lit::<S>(wv) * xc;
        }
    }
    out
}

fn add_bias(mut z: DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    for mut col in z.column_iter_mut() {
        col += b.column(0);
    }
    z
}

impl ScoreModel {
    /// A freshly initialized model with a zero output layer.
    pub fn new(arch: Architecture, norm: Normalisation, seed: u64) -> Result<Self> {
        arch.validate()?;
        norm.validate(arch.state_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.block_shapes();
        let blocks = shapes
            .iter()
            .enumerate()
            .map(|(k, &(r, c))| {
                let name = BLOCK_NAMES[k];
                let std = if name.starts_with('w') && name != "w_out" {
                    (1.0 / c as f64).sqrt()
                } else if name.starts_with("scale") || name.starts_with("shift") {
                    (0.02 / c as f64).sqrt()
                } else {
                    0.0
                };
                DMatrix::from_fn(r, c, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                })
            })
            .collect();
        Ok(Self { arch, norm, blocks, fingerprint: String::new() })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn normalisation(&self) -> &Normalisation {
        &self.norm
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.blocks
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(DMatrix::len).sum()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn set_fingerprint(&mut self, fingerprint: impl Into<String>) {
        self.fingerprint = fingerprint.into();
    }

    /// `s_φ(t, x; v)` for a single input.
    pub fn forward<S: Real>(&self, t: S, x: &DVector<S>, v: S) -> Result<DVector<S>> {
        check_dim(self.arch.state_dim, x.len())?;
        if !t.is_finite() || x.iter().any(|c| !c.is_finite()) || !(v.is_finite() && v > S::zero()) {
            return Err(domain("score network input must be finite with v > 0"));
        }
        let n = &self.norm;
        let b = &self.blocks;
        let emb = sinusoidal_embed(n.normalised_log_variance(v), self.arch.embed_dim)?;
        let vs = v * lit(n.spread);
        let span: S = lit(n.span);
        let x_scale = (span * vs).sqrt();
        let mut u: Vec<S> = x.iter().zip(&n.x_shift).map(|(&xi, &s)| (xi - lit(s)) / x_scale).collect();
        u.push((t - lit(n.t0)) / span);

        let conditioned = |k: usize, input: &[S]| -> Vec<S> {
            let a = affine(&b[4 * k], &b[4 * k + 1], input);
            let zero = DMatrix::zeros(b[4 * k].nrows(), 1);
            let m = affine(&b[4 * k + 2], &zero, emb.as_slice());
            let c = affine(&b[4 * k + 3], &zero, emb.as_slice());
            a.iter().zip(&m).zip(&c).map(|((&a, &m), &c)| silu(a * (S::one() + m) + c)).collect()
        };
        let h1 = conditioned(0, &u);
        let h2 = conditioned(1, &h1);
        let h3 = conditioned(2, &h2);
        let h4: Vec<S> = affine(&b[12], &b[13], &h3).into_iter().zip(&h2).map(|(z, &s)| silu(z) + s).collect();
        let h5: Vec<S> = affine(&b[14], &b[15], &h4).into_iter().zip(&h1).map(|(z, &s)| silu(z) + s).collect();
        let raw = affine(&b[16], &b[17], &h5);

        let elapsed = (t - lit(n.t0) + lit(n.time_offset)).max(lit(1e-12));
        let out_scale = S::one() / (elapsed * vs).sqrt();
        Ok(DVector::from_iterator(raw.len(), raw.into_iter().map(|r| r * out_scale)))
    }

    /// The score at `elapsed` time after the start, accounting for the
    /// training time offset.
    pub fn score<S: Real>(&self, elapsed: S, x: &DVector<S>, v: S) -> Result<DVector<S>> {
        let t = elapsed + lit(self.norm.t0 - self.norm.time_offset);
        self.forward(t, x, v)
    }

    /// Batched forward pass for training: column `j` of `xs` is evaluated at
    /// `ts[j]`, `vs[j]`.
    pub(crate) fn forward_batch(&self, ts: &[f64], xs: &DMatrix<f64>, vs: &[f64]) -> Result<(DMatrix<f64>, Tape)> {
        check_dim(self.arch.state_dim, xs.nrows())?;
        let cols = xs.ncols();
        check_dim(cols, ts.len())?;
        check_dim(cols, vs.len())?;
        let n = &self.norm;
        let b = &self.blocks;
        let d = self.arch.state_dim;
        let mut emb = DMatrix::zeros(self.arch.embed_dim, cols);
        let mut input = DMatrix::zeros(d + 1, cols);
        let mut out_scale = DVector::zeros(cols);
        for j in 0..cols {
            if !(vs[j] > 0.0 && vs[j].is_finite()) {
                return Err(domain("variance must be positive"));
            }
            emb.set_column(j, &sinusoidal_embed(n.normalised_log_variance(vs[j]), self.arch.embed_dim)?);
            let vsj = vs[j] * n.spread;
            let x_scale = (n.span * vsj).sqrt();
            for i in 0..d {
                input[(i, j)] = (xs[(i, j)] - n.x_shift[i]) / x_scale;
            }
            input[(d, j)] = (ts[j] - n.t0) / n.span;
            let elapsed = (ts[j] - n.t0 + n.time_offset).max(1e-12);
            out_scale[j] = 1.0 / (elapsed * vsj).sqrt();
        }

        let mut cond = Vec::with_capacity(3);
        let mut h = Vec::with_capacity(5);
        for k in 0..3 {
            let prev = if k == 0 { &input } else { &h[k - 1] };
            let a = add_bias(&b[4 * k] * prev, &b[4 * k + 1]);
            let m = (&b[4 * k + 2] * &emb).add_scalar(1.0);
            let z = a.component_mul(&m) + &b[4 * k + 3] * &emb;
            h.push(z.map(silu));
            cond.push((a, m, z));
        }
        let z4 = add_bias(&b[12] * &h[2], &b[13]);
        h.push(z4.map(silu) + &h[1]);
        let z5 = add_bias(&b[14] * &h[3], &b[15]);
        h.push(z5.map(silu) + &h[0]);
        let mut out = add_bias(&b[16] * &h[4], &b[17]);
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= out_scale[j];
        }
        Ok((out, Tape { emb, input, cond, h, z4, z5, out_scale }))
    }

    /// Gradient of a scalar loss with respect to every block, given the loss
    /// gradient `d_out` with respect to the batched outputs.
    pub(crate) fn backward(&self, tape: &Tape, d_out: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let b = &self.blocks;
        let mut grads: Vec<DMatrix<f64>> = b.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
        let col_sum = |m: &DMatrix<f64>| DMatrix::from_iterator(m.nrows(), 1, m.row_iter().map(|r| r.sum()));

        let mut d_raw = d_out.clone();
        for (j, mut col) in d_raw.column_iter_mut().enumerate() {
            col *= tape.out_scale[j];
        }
        grads[16] = &d_raw * tape.h[4].transpose();
        grads[17] = col_sum(&d_raw);
        let d_h5 = b[16].tr_mul(&d_raw);

        let d_h1 = d_h5.clone();
        let dz5 = d_h5.zip_map(&tape.z5, |g, z| g * silu_grad(z));
        grads[14] = &dz5 * tape.h[3].transpose();
        grads[15] = col_sum(&dz5);
        let d_h4 = b[14].tr_mul(&dz5);

        let d_h2 = d_h4.clone();
        let dz4 = d_h4.zip_map(&tape.z4, |g, z| g * silu_grad(z));
        grads[12] = &dz4 * tape.h[2].transpose();
        grads[13] = col_sum(&dz4);
        let mut d_h = b[12].tr_mul(&dz4);
        let skips = [d_h1, d_h2];

        for k in (0..3).rev() {
            let (a, m, z) = &tape.cond[k];
            let dz = d_h.zip_map(z, |g, z| g * silu_grad(z));
            let da = dz.component_mul(m);
            let dm = dz.component_mul(a);
            let prev = if k == 0 { &tape.input } else { &tape.h[k - 1] };
            grads[4 * k] = &da * prev.transpose();
            grads[4 * k + 1] = col_sum(&da);
            grads[4 * k + 2] = &dm * tape.emb.transpose();
            grads[4 * k + 3] = &dz * tape.emb.transpose();
            if k > 0 {
                d_h = b[4 * k].tr_mul(&da) + &skips[k - 1];
            }
        }
        grads
    }

    fn params_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for block in &self.blocks {
            for v in block.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }

    /// Writes a JSON checkpoint with architecture, normalisation, training
    /// fingerprint and a digest of the parameters.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = Checkpoint {
            architecture: self.arch.clone(),
            normalisation: self.norm.clone(),
            fingerprint: self.fingerprint.clone(),
            params_sha256: self.params_digest(),
            blocks: self
                .blocks
                .iter()
                .zip(BLOCK_NAMES)
                .map(|(m, name)| Block { name: name.into(), rows: m.nrows(), cols: m.ncols(), data: m.as_slice().to_vec() })
                .collect(),
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &ckpt)?;
        Ok(())
    }

    /// Loads and validates a checkpoint written by [`save`](Self::save).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.architecture.validate()?;
        ckpt.normalisation.validate(ckpt.architecture.state_dim)?;
        let shapes = ckpt.architecture.block_shapes();
        if ckpt.blocks.len() != shapes.len() {
            return Err(Error::Checkpoint(format!("{} blocks, expected {}", ckpt.blocks.len(), shapes.len())));
        }
        let mut blocks = Vec::with_capacity(shapes.len());
        for ((blk, &(r, c)), name) in ckpt.blocks.into_iter().zip(&shapes).zip(BLOCK_NAMES) {
            if blk.name != name || blk.rows != r || blk.cols != c || blk.data.len() != r * c {
                return Err(Error::Checkpoint(format!("block {} does not match {name} ({r}×{c})", blk.name)));
            }
            if blk.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("block {name} has non-finite entries")));
            }
            blocks.push(DMatrix::from_vec(r, c, blk.data));
        }
        let model = Self { arch: ckpt.architecture, norm: ckpt.normalisation, blocks, fingerprint: ckpt.fingerprint };
        if model.params_digest() != ckpt.params_sha256 {
            return Err(Error::Checkpoint("parameter digest mismatch".into()));
        }
        Ok(model)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct Block {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    architecture: Architecture,
    normalisation: Normalisation,
    fingerprint: String,
    params_sha256: String,
    blocks: Vec<Block>,
}
