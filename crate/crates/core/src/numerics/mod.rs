//! Small dense-tensor kernel: softmax maps, attention pooling, multi-resolution
//! feature sampling, MLPs with exact backpropagation and the pose losses.

mod gradcheck;
mod loss;
mod mlp;
mod optim;

pub use gradcheck::{central_differences, grad_check, GradCheckReport};
pub use loss::{log_cosh, loss_pose, loss_rot, loss_trans, LossGrad, DEFAULT_POSE_BETA};
pub use mlp::{sigmoid, Activation, LayerSpec, Mlp, MlpTrace};
pub use optim::{LrSchedule, SgdMomentum};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("position ({x}, {y}) is outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

fn mismatch(expected: &[usize], actual: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch { expected: expected.to_vec(), actual: actual.to_vec() }
}

/// Row-major dense tensor of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = NumericsError;
    fn try_from(raw: RawTensor) -> Result<Self, Self::Error> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if len != Some(data.len()) {
            return Err(mismatch(&shape, &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    /// Contiguous slice along the last axis at the given leading index.
    pub fn lane(&self, leading: &[usize]) -> &[f64] {
        let inner = *self.shape.last().unwrap_or(&1);
        let mut idx = leading.to_vec();
        idx.push(0);
        let o = self.offset(&idx);
        &self.data[o..o + inner]
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over every entry of an `H×W` response map.
pub fn softmax_map(a: &Tensor) -> Tensor {
    Tensor { shape: a.shape.clone(), data: softmax(&a.data) }
}

/// How the attention-weighted map is reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Mean of the weighted map over all `H·W` cells.
    #[default]
    Mean,
    /// Plain attention-weighted sum (weights already sum to one).
    WeightedSum,
}

/// Pools an `H×W×E` feature map with softmax attention over an `H×W` logit map.
pub fn attention_pool(features: &Tensor, logits: &Tensor, mode: PoolingMode) -> Result<Vec<f64>, NumericsError> {
    let fs = features.shape();
    if fs.len() != 3 || logits.shape() != &fs[..2] {
        let expected = if fs.len() == 3 { fs[..2].to_vec() } else { vec![0, 0] };
        return Err(mismatch(&expected, logits.shape()));
    }
    let (h, w, e) = (fs[0], fs[1], fs[2]);
    let weights = softmax_map(logits);
    let mut g = vec![0.0; e];
    for (cell, &wt) in weights.data().iter().enumerate() {
        let f = &features.data()[cell * e..(cell + 1) * e];
        for (acc, &v) in g.iter_mut().zip(f) {
            *acc += wt * v;
        }
    }
    if mode == PoolingMode::Mean {
        let cells = (h * w) as f64;
        g.iter_mut().for_each(|v| *v /= cells);
    }
    Ok(g)
}

/// Samples each `H_j×W_j×C_j` map at the cell under `center` (pixel `x`, `y`)
/// and concatenates the results in map order. Lookups use the floor of the
/// scaled position.
pub fn sample_multires(maps: &[Tensor], center: (f64, f64), image_size: (u32, u32)) -> Result<Vec<f64>, NumericsError> {
    let (x, y) = center;
    let (width, height) = image_size;
    let inside = x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64 && width > 0 && height > 0;
    if !inside {
        return Err(NumericsError::OutOfBounds { x, y, width, height });
    }
    let mut out = Vec::new();
    for map in maps {
        let s = map.shape();
        if s.len() != 3 || s[0] == 0 || s[1] == 0 {
            return Err(mismatch(&[1, 1, 1], s));
        }
        let row = ((y / height as f64 * s[0] as f64).floor() as usize).min(s[0] - 1);
        let col = ((x / width as f64 * s[1] as f64).floor() as usize).min(s[1] - 1);
        out.extend_from_slice(map.lane(&[row, col]));
    }
    Ok(out)
}
