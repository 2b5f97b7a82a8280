//! The two-layer projection head `W2·tanh(W1·x + b1) + b2`.
//!
//! Parameters live in one flat f64 buffer laid out as
//! `[W1 (hidden×input, row-major) | b1 | W2 (output×hidden, row-major) | b2]`
//! so optimizers and gradient checks can treat them uniformly.

use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Channel, EmbeddingStore, EmbeddingVector};
use crate::error::{EmbeddingError, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl HeadDims {
    /// Hidden and output width equal to the input width.
    pub fn square(dim: usize) -> Self {
        HeadDims { input: dim, hidden: dim, output: dim }
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    dims: HeadDims,
    params: Vec<f64>,
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl ProjectionHead {
    pub fn zeros(dims: HeadDims) -> Self {
        ProjectionHead { dims, params: vec![0.0; dims.param_count()] }
    }

    /// Each layer's weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init(dims: HeadDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Self::zeros(dims);
        let first = dims.hidden * dims.input + dims.hidden;
        let bound1 = 1.0 / (dims.input as f64).sqrt();
        let bound2 = 1.0 / (dims.hidden as f64).sqrt();
        let u1 = Uniform::new_inclusive(-bound1, bound1).expect("finite bound");
        let u2 = Uniform::new_inclusive(-bound2, bound2).expect("finite bound");
        for p in &mut head.params[..first] {
            *p = u1.sample(&mut rng);
        }
        for p in &mut head.params[first..] {
            *p = u2.sample(&mut rng);
        }
        head
    }

    /// `W1 = I, W2 = I` scaled by `scale`, zero biases. Requires a square head.
    pub fn identity(dim: usize, scale: f64) -> Self {
        let mut head = Self::zeros(HeadDims::square(dim));
        for i in 0..dim {
            head.w1_mut()[i * dim + i] = scale;
            head.w2_mut()[i * dim + i] = 1.0 / scale;
        }
        head
    }

    pub fn from_parts(dims: HeadDims, w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>) -> Result<Self, String> {
        let expect = [
            ("w1", w1.len(), dims.hidden * dims.input),
            ("b1", b1.len(), dims.hidden),
            ("w2", w2.len(), dims.output * dims.hidden),
            ("b2", b2.len(), dims.output),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(format!("{name} has {got} values, expected {want}"));
            }
        }
        let mut params = w1;
        params.extend(b1);
        params.extend(w2);
        params.extend(b2);
        if params.iter().any(|p| !p.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(ProjectionHead { dims, params })
    }

    pub fn dims(&self) -> HeadDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let d = self.dims;
        let b1 = d.hidden * d.input;
        let w2 = b1 + d.hidden;
        let b2 = w2 + d.output * d.hidden;
        [0, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[0]..o[1]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[1]..o[2]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[2]..o[3]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o[3]..]
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[0]..o[1]]
    }

    fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.params[o[2]..o[3]]
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace, TrainError> {
        let d = self.dims;
        if x.len() != d.input {
            return Err(TrainError::DimMismatch { expected: d.input, found: x.len() });
        }
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let hidden: Vec<f64> = (0..d.hidden)
            .map(|i| {
                let row = &w1[i * d.input..(i + 1) * d.input];
                (dot(row, x) + b1[i]).tanh()
            })
            .collect();
        let output: Vec<f64> =
            (0..d.output).map(|i| dot(&w2[i * d.hidden..(i + 1) * d.hidden], &hidden) + b2[i]).collect();
        if output.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite);
        }
        Ok(ForwardTrace { hidden, output })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.forward_trace(x).map(|t| t.output)
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output` for input `x`.
    pub fn backward(&self, x: &[f64], trace: &ForwardTrace, d_output: &[f64], grad: &mut [f64]) {
        let d = self.dims;
        let [_, o_b1, o_w2, o_b2] = self.offsets();
        let w2 = self.w2();
        let mut d_pre = vec![0.0; d.hidden];
        for (i, &g) in d_output.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[o_b2 + i] += g;
            let row = o_w2 + i * d.hidden;
            for (j, &h) in trace.hidden.iter().enumerate() {
                grad[row + j] += g * h;
                d_pre[j] += g * w2[i * d.hidden + j];
            }
        }
        for (j, dp) in d_pre.iter_mut().enumerate() {
            let h = trace.hidden[j];
            *dp *= 1.0 - h * h;
        }
        for (j, &g) in d_pre.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[o_b1 + j] += g;
            let row = j * d.input;
            for (k, &xk) in x.iter().enumerate() {
                grad[row + k] += g * xk;
            }
        }
    }

    pub fn to_file(&self, seed: u64, config: serde_json::Value) -> HeadFile {
        HeadFile {
            dims: self.dims,
            seed,
            config,
            w1: self.w1().to_vec(),
            b1: self.b1().to_vec(),
            w2: self.w2().to_vec(),
            b2: self.b2().to_vec(),
        }
    }

    /// Writes the parameter record as one JSON line followed by one
    /// `{"epoch":…,"loss":…}` line per entry of `loss_trace`.
    pub fn save(
        &self,
        path: &Path,
        seed: u64,
        config: serde_json::Value,
        loss_trace: &[f64],
    ) -> Result<(), TrainError> {
        let err = |message: String| TrainError::HeadFile { path: path.to_path_buf(), message };
        let file = self.to_file(seed, config);
        let mut text = serde_json::to_string(&file).map_err(|e| err(e.to_string()))?;
        text.push('\n');
        for (i, loss) in loss_trace.iter().enumerate() {
            let line = serde_json::json!({ "epoch": i + 1, "loss": loss });
            text.push_str(&line.to_string());
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, HeadFile), TrainError> {
        let err = |message: String| TrainError::HeadFile { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let first = text.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| err("empty head file".into()))?;
        let file: HeadFile = serde_json::from_str(first).map_err(|e| err(e.to_string()))?;
        let head =
            ProjectionHead::from_parts(file.dims, file.w1.clone(), file.b1.clone(), file.w2.clone(), file.b2.clone())
                .map_err(err)?;
        Ok((head, file))
    }
}

/// Serialized head parameters with a config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadFile {
    pub dims: HeadDims,
    pub seed: u64,
    pub config: serde_json::Value,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `ft_sentence`, `ft_e1` and `ft_e2` for every id carrying a base
/// sentence vector. Base channels are kept.
pub fn apply_head(head: &ProjectionHead, store: &EmbeddingStore) -> Result<EmbeddingStore, TrainError> {
    let mut out = store.clone();
    let ids: Vec<String> =
        store.ids().filter(|id| store.get(id, Channel::Sentence).is_some()).map(str::to_string).collect();
    for id in ids {
        for base in [Channel::Sentence, Channel::E1, Channel::E2] {
            let v = store.get(&id, base).ok_or_else(|| EmbeddingError::Missing {
                id: id.clone(),
                channel: base.to_string(),
                hint: String::new(),
            })?;
            let projected = head.forward(&v.to_f64())?;
            let target = base.finetuned().expect("base channel has a fine-tuned twin");
            out.insert(id.clone(), target, EmbeddingVector::from_f64(&projected))?;
        }
    }
    Ok(out)
}
