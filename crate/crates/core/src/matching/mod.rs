//! Pairwise object matching between two frames.
//!
//! Each detection is described by a fused vector `geometry ⊕ appearance`,
//! where `geometry = (T_x, T_y, T_z, R_x, R_y, 0) ⊕ G` holds the
//! reference-frame pose, one zero pad slot and the crop embedding `G`.
//! Every pair of rows of the two zero-padded `N×d` feature matrices is scored
//! independently by a 6-layer MLP (equivalent to a stack of 1×1
//! convolutions over the `N×N×2d` pair tensor). The `N×N` score matrix is then
//! augmented with a constant null column/row `δ` and softmax-normalized so that
//! each object gets a distribution over its candidates plus "no match".

mod geometric;
mod model;
mod train;

pub use geometric::GeometricAffinity;
pub use model::{Affinity, Matcher, PoseHead, PoseTarget};
pub use train::{
    association_accuracy, average_precision, evaluate_matcher, load_checkpoint, match_accuracy_map, save_checkpoint,
    train_matcher, Checkpoint, EpochMetrics, MatcherEvaluation, MatchingSample, SampleObject, TrainOutcome,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{to_reference_frame, EgoPose, FrameId, GeometryError, Pose5D};
use crate::numerics::{sigmoid, softmax, LrSchedule, Mlp, NumericsError, Tensor};
use crate::scene::{Detection, FrameRecord, MatchMatrix};

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("pose is in frame {0}, expected the reference frame")]
    FrameMismatch(FrameId),
    #[error("{count} objects exceed capacity {capacity}")]
    CapacityExceeded { count: usize, capacity: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("real object {0} has no entry in the match matrix")]
    DegenerateMatch(String),
    #[error("loss became non-finite at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("detection is missing {0}")]
    MissingFeature(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Values the δ-augmented softmax operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    /// Scorer pre-sigmoid logits.
    #[default]
    Logit,
    /// Sigmoid outputs in `[0, 1]`.
    Probability,
}

/// Which axis the augmented matrices are normalized over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxis {
    /// Rows of the column-augmented matrix and columns of the row-augmented
    /// one: each object's `N + 1` candidates form one distribution.
    #[default]
    Candidates,
    /// Columns of the column-augmented matrix and rows of the row-augmented one.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Maximum number of objects per frame (`N`).
    pub capacity: usize,
    /// Null row/column value `δ`.
    pub delta: f64,
    /// Weight of the mean pose loss in the joint loss.
    pub lambda: f64,
    /// Weight of the translation term inside the pose loss.
    pub beta: f64,
    pub n_max: usize,
    pub appearance_dim: usize,
    pub embedding_dim: usize,
    /// Hidden widths of the pair scorer; five entries give six layers.
    pub scorer_hidden: Vec<usize>,
    pub pose_hidden: Vec<usize>,
    pub score_space: ScoreSpace,
    pub softmax_axis: SoftmaxAxis,
    /// Reference-frame translations are divided by this before scoring (m).
    pub translation_scale: f64,
    /// Depth normalization of the pose-head translation target (m).
    pub depth_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply a fresh random permutation and sign flip of the appearance
    /// channels to both frames of every training pair each epoch.
    pub augment_appearance: bool,
    pub seed: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            capacity: 30,
            delta: 8.0,
            lambda: 0.005,
            beta: 0.1,
            n_max: 35,
            appearance_dim: 64,
            embedding_dim: 8,
            scorer_hidden: vec![64, 64, 32, 32, 16],
            pose_hidden: vec![32],
            score_space: ScoreSpace::Logit,
            softmax_axis: SoftmaxAxis::Candidates,
            translation_scale: 20.0,
            depth_scale: 50.0,
            epochs: 30,
            batch_size: 8,
            lr: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 0.0008,
            augment_appearance: true,
            seed: 0,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), MatchingError> {
        let bad = |m: &str| Err(MatchingError::Config(m.to_string()));
        if self.capacity < 1 {
            return bad("capacity must be at least 1");
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be non-negative");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta must be non-negative");
        }
        if !(self.translation_scale > 0.0) || !(self.depth_scale > 0.0) {
            return bad("scales must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.initial > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("invalid optimizer settings");
        }
        Ok(())
    }

    /// Fused descriptor length `d = A + 6 + E`.
    pub fn descriptor_dim(&self) -> usize {
        self.appearance_dim + GEOMETRY_POSE_SLOTS + self.embedding_dim
    }
}

/// Pose slots at the head of every geometry vector.
pub const GEOMETRY_POSE_SLOTS: usize = 6;

/// Per-object matching features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDescriptor {
    pub appearance: Vec<f64>,
    /// `(T_x, T_y, T_z, R_x, R_y, 0) ⊕ G`.
    pub geometry: Vec<f64>,
}

impl ObjectDescriptor {
    /// `geometry ⊕ appearance`.
    pub fn fused(&self) -> Vec<f64> {
        let mut v = self.geometry.clone();
        v.extend_from_slice(&self.appearance);
        v
    }

    pub fn dim(&self) -> usize {
        self.geometry.len() + self.appearance.len()
    }

    pub fn embedding(&self) -> &[f64] {
        &self.geometry[GEOMETRY_POSE_SLOTS.min(self.geometry.len())..]
    }
}

pub fn build_descriptor(appearance: &[f64], ref_pose: &Pose5D, embedding: &[f64]) -> Result<ObjectDescriptor, MatchingError> {
    if ref_pose.frame != FrameId::Reference {
        return Err(MatchingError::FrameMismatch(ref_pose.frame));
    }
    let t = ref_pose.t;
    let r = ref_pose.r;
    let mut geometry = vec![t.x, t.y, t.z, r.x, r.y, 0.0];
    geometry.extend_from_slice(embedding);
    Ok(ObjectDescriptor { appearance: appearance.to_vec(), geometry })
}

/// Descriptor of one detection: its observation lifted into the reference
/// frame plus whatever appearance vector and embedding it carries.
pub fn detection_descriptor(det: &Detection, frame: &FrameRecord, reference: &EgoPose) -> Result<ObjectDescriptor, MatchingError> {
    let obs = det.observation.as_ref().ok_or(MatchingError::MissingFeature("a pose observation"))?;
    let cam = obs.to_pose(&frame.intrinsics, frame.frame_index)?;
    let pose = to_reference_frame(&cam, &frame.ego, reference)?;
    let empty = Vec::new();
    build_descriptor(
        det.appearance.as_ref().unwrap_or(&empty),
        &pose,
        det.embedding.as_ref().unwrap_or(&empty),
    )
}

/// Descriptors of every detection in a frame.
pub fn frame_descriptors(frame: &FrameRecord, reference: &EgoPose) -> Result<Vec<ObjectDescriptor>, MatchingError> {
    frame.detections.iter().map(|d| detection_descriptor(d, frame, reference)).collect()
}

/// Stacks fused descriptors into an `N×d` matrix, zero rows after the last object.
pub fn build_feature_matrix(descriptors: &[ObjectDescriptor], capacity: usize, dim: usize) -> Result<Tensor, MatchingError> {
    if descriptors.len() > capacity {
        return Err(MatchingError::CapacityExceeded { count: descriptors.len(), capacity });
    }
    let mut data = vec![0.0; capacity * dim];
    for (i, d) in descriptors.iter().enumerate() {
        let f = d.fused();
        if f.len() != dim {
            return Err(MatchingError::ShapeMismatch(format!("descriptor {i} has {} entries, expected {dim}", f.len())));
        }
        data[i * dim..(i + 1) * dim].copy_from_slice(&f);
    }
    Ok(Tensor::new(vec![capacity, dim], data)?)
}

/// `E[i, j] = Fa[i] ⊕ Fb[j]`, shape `N×N×2d`.
pub fn build_pair_tensor(fa: &Tensor, fb: &Tensor) -> Result<Tensor, MatchingError> {
    if fa.shape().len() != 2 || fa.shape() != fb.shape() {
        return Err(MatchingError::ShapeMismatch(format!("{:?} vs {:?}", fa.shape(), fb.shape())));
    }
    let (n, d) = (fa.shape()[0], fa.shape()[1]);
    let mut data = Vec::with_capacity(n * n * 2 * d);
    for i in 0..n {
        for j in 0..n {
            data.extend_from_slice(fa.lane(&[i]));
            data.extend_from_slice(fb.lane(&[j]));
        }
    }
    Ok(Tensor::new(vec![n, n, 2 * d], data)?)
}

/// Applies the scorer to every pair vector: `S[i, j] = sigmoid(mlp(E[i, j]))`.
pub fn score_pairs(pairs: &Tensor, scorer: &Mlp) -> Result<Tensor, MatchingError> {
    let logits = score_logits(pairs, scorer)?;
    let s = logits.data().iter().map(|&z| sigmoid(z)).collect();
    Ok(Tensor::new(logits.shape().to_vec(), s)?)
}

/// Pre-sigmoid scorer outputs for every pair vector.
pub fn score_logits(pairs: &Tensor, scorer: &Mlp) -> Result<Tensor, MatchingError> {
    let s = pairs.shape();
    if s.len() != 3 || s[0] != s[1] || s[2] != scorer.input_dim() || scorer.output_dim() != 1 {
        return Err(MatchingError::ShapeMismatch(format!(
            "pair tensor {:?} for scorer {:?}",
            s,
            scorer.dims()
        )));
    }
    let n = s[0];
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(scorer.forward(pairs.lane(&[i, j]))?[0]);
        }
    }
    Ok(Tensor::new(vec![n, n], out)?)
}

/// Raw, augmented, normalized and fused similarities for one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBundle {
    pub capacity: usize,
    /// Real objects in the first / second frame.
    pub n1: usize,
    pub n2: usize,
    /// `N×N` sigmoid similarities.
    pub s: Tensor,
    /// `N×(N+1)`: score-space values with a `δ` column appended.
    pub s1: Tensor,
    /// `(N+1)×N`: score-space values with a `δ` row appended.
    pub s2: Tensor,
    pub s1n: Tensor,
    pub s2n: Tensor,
    /// `(N+1)×(N+1)` inference similarity.
    pub fused: Tensor,
    pub score_space: ScoreSpace,
    pub axis: SoftmaxAxis,
}

/// Index groups of a flat matrix that are normalized together.
fn softmax_groups(rows: usize, cols: usize, along_rows: bool) -> Vec<Vec<usize>> {
    if along_rows {
        (0..rows).map(|i| (0..cols).map(|j| i * cols + j).collect()).collect()
    } else {
        (0..cols).map(|j| (0..rows).map(|i| i * cols + j).collect()).collect()
    }
}

fn normalize_groups(values: &[f64], groups: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for g in groups {
        let p = softmax(&g.iter().map(|&k| values[k]).collect::<Vec<_>>());
        for (&k, pk) in g.iter().zip(p) {
            out[k] = pk;
        }
    }
    out
}

/// Appends the `δ` column/row to `values` (an `N×N` score-space matrix),
/// normalizes both augmented matrices and fuses them.
///
/// `s` carries the sigmoid similarities for reporting; `values` is what the
/// softmax sees (logits or the same probabilities, per `space`).
pub fn augment_normalize(
    s: &Tensor,
    values: &Tensor,
    delta: f64,
    n1: usize,
    n2: usize,
    space: ScoreSpace,
    axis: SoftmaxAxis,
) -> Result<SimilarityBundle, MatchingError> {
    let n = values.shape()[0];
    if values.shape() != [n, n] || s.shape() != values.shape() || n1 > n || n2 > n {
        return Err(MatchingError::ShapeMismatch(format!("scores {:?} with n1={n1}, n2={n2}", values.shape())));
    }
    let v = values.data();
    let mut s1 = Vec::with_capacity(n * (n + 1));
    for i in 0..n {
        s1.extend_from_slice(&v[i * n..(i + 1) * n]);
        s1.push(delta);
    }
    let mut s2 = v.to_vec();
    s2.extend(std::iter::repeat_n(delta, n));
    let candidates = axis == SoftmaxAxis::Candidates;
    let s1n = normalize_groups(&s1, &softmax_groups(n, n + 1, candidates));
    let s2n = normalize_groups(&s2, &softmax_groups(n + 1, n, !candidates));
    let side = n + 1;
    let mut fused = vec![0.0; side * side];
    for i in 0..n {
        for j in 0..n {
            fused[i * side + j] = (s1n[i * (n + 1) + j] + s2n[i * n + j]) / 2.0;
        }
        fused[i * side + n] = s1n[i * (n + 1) + n];
        fused[n * side + i] = s2n[n * n + i];
    }
    Ok(SimilarityBundle {
        capacity: n,
        n1,
        n2,
        s: s.clone(),
        s1: Tensor::new(vec![n, n + 1], s1)?,
        s2: Tensor::new(vec![n + 1, n], s2)?,
        s1n: Tensor::new(vec![n, n + 1], s1n)?,
        s2n: Tensor::new(vec![n + 1, n], s2n)?,
        fused: Tensor::new(vec![side, side], fused)?,
        score_space: space,
        axis,
    })
}

fn check_matrix(bundle: &SimilarityBundle, m: &MatchMatrix) -> Result<(), MatchingError> {
    let n = bundle.capacity;
    if m.capacity() != n || m.rows() != bundle.n1 || m.cols() != bundle.n2 {
        return Err(MatchingError::ShapeMismatch(format!(
            "match matrix N={} ({}x{}) vs bundle N={} ({}x{})",
            m.capacity(),
            m.rows(),
            m.cols(),
            n,
            bundle.n1,
            bundle.n2
        )));
    }
    for i in 0..bundle.n1 {
        if (0..=n).all(|j| m.get(i, j) == 0) {
            return Err(MatchingError::DegenerateMatch(format!("row {i}")));
        }
    }
    for j in 0..bundle.n2 {
        if (0..=n).all(|i| m.get(i, j) == 0) {
            return Err(MatchingError::DegenerateMatch(format!("column {j}")));
        }
    }
    Ok(())
}

/// Affinity loss `(L1 + L2) / 2` and its gradient w.r.t. the `N×N`
/// score-space values the bundle was built from.
///
/// `L1 = -(1/N1) Σ_{real i} Σ_j m_ij log s̃¹_ij` and `L2` is the same over real
/// columns of `s̃²`. A side with no real objects contributes zero.
pub fn loss_affinity_grad(bundle: &SimilarityBundle, m: &MatchMatrix) -> Result<(f64, Vec<f64>), MatchingError> {
    check_matrix(bundle, m)?;
    let n = bundle.capacity;
    let candidates = bundle.axis == SoftmaxAxis::Candidates;
    let mut grad = vec![0.0; n * n];
    let mut total = 0.0;

    // Loss weights per augmented entry: w = c * m on counted entries.
    let mut w1 = vec![0.0; n * (n + 1)];
    if bundle.n1 > 0 {
        let c = 0.5 / bundle.n1 as f64;
        for i in 0..bundle.n1 {
            for j in 0..=n {
                w1[i * (n + 1) + j] = c * m.get(i, j) as f64;
            }
        }
    }
    let mut w2 = vec![0.0; (n + 1) * n];
    if bundle.n2 > 0 {
        let c = 0.5 / bundle.n2 as f64;
        for j in 0..bundle.n2 {
            for i in 0..=n {
                w2[i * n + j] = c * m.get(i, j) as f64;
            }
        }
    }

    let parts = [
        (&bundle.s1, &w1, softmax_groups(n, n + 1, candidates), n + 1),
        (&bundle.s2, &w2, softmax_groups(n + 1, n, !candidates), n),
    ];
    for (idx, (aug, w, groups, cols)) in parts.into_iter().enumerate() {
        let z = aug.data();
        for g in &groups {
            let wsum: f64 = g.iter().map(|&k| w[k]).sum();
            if wsum == 0.0 {
                continue;
            }
            let zmax = g.iter().map(|&k| z[k]).fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + g.iter().map(|&k| (z[k] - zmax).exp()).sum::<f64>().ln();
            for &k in g {
                let logp = z[k] - lse;
                total -= w[k] * logp;
                let dz = logp.exp() * wsum - w[k];
                let (r, c) = (k / cols, k % cols);
                // Only the real N×N block depends on the scores; δ entries are constants.
                let real = if idx == 0 { c < n } else { r < n };
                if real {
                    grad[r * n + c] += dz;
                }
            }
        }
    }
    Ok((total, grad))
}

pub fn loss_affinity(bundle: &SimilarityBundle, m: &MatchMatrix) -> Result<f64, MatchingError> {
    Ok(loss_affinity_grad(bundle, m)?.0)
}

/// `L_aff + λ · mean(pose_losses)`; an empty pose list contributes zero.
pub fn loss_joint(affinity: f64, pose_losses: &[f64], lambda: f64) -> f64 {
    if pose_losses.is_empty() {
        return affinity;
    }
    affinity + lambda * pose_losses.iter().sum::<f64>() / pose_losses.len() as f64
}

#[cfg(test)]
mod tests;
