use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment_normalize, loss_affinity_grad, MatcherConfig, MatchingError, ObjectDescriptor, ScoreSpace, SimilarityBundle};
use crate::geometry::{CameraIntrinsics, PixelObservation};
use crate::numerics::{loss_pose, sigmoid, Activation, Mlp, MlpTrace, Tensor};
use crate::scene::MatchMatrix;

/// Anything that can produce a similarity bundle for two descriptor sets.
pub trait Affinity {
    fn capacity(&self) -> usize;
    fn similarity(&self, a: &[ObjectDescriptor], b: &[ObjectDescriptor]) -> Result<SimilarityBundle, MatchingError>;
}

/// Pose regression target `(c_x / W, c_y / H, T_z / depth_scale, R_x, R_y)`.
pub struct PoseTarget;

impl PoseTarget {
    pub fn encode(obs: &PixelObservation, k: &CameraIntrinsics, depth_scale: f64) -> [f64; 5] {
        [
            obs.center.x / k.width as f64,
            obs.center.y / k.height as f64,
            obs.depth / depth_scale,
            obs.rotation.x,
            obs.rotation.y,
        ]
    }

    pub fn decode(v: &[f64; 5], k: &CameraIntrinsics, depth_scale: f64) -> PixelObservation {
        PixelObservation {
            center: Vector2::new(v[0] * k.width as f64, v[1] * k.height as f64),
            depth: v[2] * depth_scale,
            rotation: Vector2::new(v[3], v[4]),
        }
    }
}

/// Two small regressors from the crop embedding to a pose target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseHead {
    pub translation: Mlp,
    pub rotation: Mlp,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl PoseHead {
    pub fn new(embedding_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        Self {
            translation: Mlp::new(&dims(embedding_dim, hidden, 3), Activation::Tanh, Activation::Linear, rng),
            rotation: Mlp::new(&dims(embedding_dim, hidden, 2), Activation::Tanh, Activation::Linear, rng),
        }
    }

    pub fn num_params(&self) -> usize {
        self.translation.num_params() + self.rotation.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.translation.params().to_vec();
        p.extend_from_slice(self.rotation.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let k = self.translation.num_params();
        self.translation.params_mut().copy_from_slice(&p[..k]);
        self.rotation.params_mut().copy_from_slice(&p[k..]);
    }

    /// Target-space prediction with a unit rotation.
    pub fn predict(&self, embedding: &[f64]) -> Result<[f64; 5], MatchingError> {
        let t = self.translation.forward(embedding)?;
        let r = self.rotation.forward(embedding)?;
        let n = (r[0] * r[0] + r[1] * r[1]).sqrt().max(1e-12);
        Ok([t[0], t[1], t[2], r[0] / n, r[1] / n])
    }

    /// Pose loss against `target`; gradients (scaled by `weight`) are added to
    /// `grads`, laid out as [`PoseHead::params`].
    pub fn loss_grad(
        &self,
        embedding: &[f64],
        target: &[f64; 5],
        beta: f64,
        weight: f64,
        grads: &mut [f64],
    ) -> Result<f64, MatchingError> {
        let tt = self.translation.forward_trace(embedding)?;
        let rt = self.rotation.forward_trace(embedding)?;
        let t = tt.output();
        let r = rt.output();
        let norm = (r[0] * r[0] + r[1] * r[1]).sqrt().max(1e-12);
        let u = [r[0] / norm, r[1] / norm];
        let lg = loss_pose(target, &[t[0], t[1], t[2], u[0], u[1]], beta);
        let gt: Vec<f64> = lg.grad[..3].iter().map(|g| g * weight).collect();
        let gu = [lg.grad[3] * weight, lg.grad[4] * weight];
        // d(r/|r|)/dr = (I - u uᵀ) / |r|
        let dot = gu[0] * u[0] + gu[1] * u[1];
        let gr = [(gu[0] - dot * u[0]) / norm, (gu[1] - dot * u[1]) / norm];
        let k = self.translation.num_params();
        let (g_t, g_r) = grads.split_at_mut(k);
        self.translation.backward(&tt, &gt, g_t)?;
        self.rotation.backward(&rt, &gr, g_r)?;
        Ok(lg.value)
    }
}

/// Learned pairwise matcher: pair scorer plus auxiliary pose head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    pub config: MatcherConfig,
    pub scorer: Mlp,
    pub pose_head: PoseHead,
}

/// One scorer evaluation shared by every pair with the same input vector.
struct Unique {
    trace: MlpTrace,
    logit: f64,
}

struct Forward {
    bundle: SimilarityBundle,
    real: Vec<Unique>,
    row_pad: Vec<Unique>,
    col_pad: Vec<Unique>,
    both_pad: Option<Unique>,
}

impl Matcher {
    pub fn new(config: MatcherConfig) -> Result<Self, MatchingError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.descriptor_dim();
        let scorer = Mlp::new(&dims(2 * d, &config.scorer_hidden, 1), Activation::Tanh, Activation::Linear, &mut rng);
        let pose_head = PoseHead::new(config.embedding_dim, &config.pose_hidden, &mut rng);
        Ok(Self { config, scorer, pose_head })
    }

    /// Checks that the networks agree with the configuration.
    pub fn validate(&self) -> Result<(), MatchingError> {
        self.config.validate()?;
        let d = self.config.descriptor_dim();
        let e = self.config.embedding_dim;
        let ok = self.scorer.input_dim() == 2 * d
            && self.scorer.output_dim() == 1
            && self.pose_head.translation.input_dim() == e
            && self.pose_head.translation.output_dim() == 3
            && self.pose_head.rotation.input_dim() == e
            && self.pose_head.rotation.output_dim() == 2;
        if ok {
            Ok(())
        } else {
            Err(MatchingError::ShapeMismatch(format!("networks do not fit descriptor dim {d}, embedding dim {e}")))
        }
    }

    /// Scorer input for one descriptor: fused vector with translations rescaled.
    pub fn features(&self, d: &ObjectDescriptor) -> Result<Vec<f64>, MatchingError> {
        let mut f = d.fused();
        if f.len() != self.config.descriptor_dim() {
            return Err(MatchingError::ShapeMismatch(format!(
                "descriptor has {} entries, expected {}",
                f.len(),
                self.config.descriptor_dim()
            )));
        }
        for v in &mut f[..3] {
            *v /= self.config.translation_scale;
        }
        Ok(f)
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> Result<Unique, MatchingError> {
        let mut x = a.to_vec();
        x.extend_from_slice(b);
        let trace = self.scorer.forward_trace(&x)?;
        let logit = trace.output()[0];
        Ok(Unique { trace, logit })
    }

    fn forward(&self, a: &[ObjectDescriptor], b: &[ObjectDescriptor]) -> Result<Forward, MatchingError> {
        let n = self.config.capacity;
        let (n1, n2) = (a.len(), b.len());
        if n1.max(n2) > n {
            return Err(MatchingError::CapacityExceeded { count: n1.max(n2), capacity: n });
        }
        let fa = a.iter().map(|d| self.features(d)).collect::<Result<Vec<_>, _>>()?;
        let fb = b.iter().map(|d| self.features(d)).collect::<Result<Vec<_>, _>>()?;
        let zero = vec![0.0; self.config.descriptor_dim()];
        let mut real = Vec::with_capacity(n1 * n2);
        for x in &fa {
            for y in &fb {
                real.push(self.eval(x, y)?);
            }
        }
        let row_pad = if n2 < n { fa.iter().map(|x| self.eval(x, &zero)).collect::<Result<_, _>>()? } else { Vec::new() };
        let col_pad = if n1 < n { fb.iter().map(|y| self.eval(&zero, y)).collect::<Result<_, _>>()? } else { Vec::new() };
        let both_pad = if n1 < n && n2 < n { Some(self.eval(&zero, &zero)?) } else { None };

        let mut z = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                z[i * n + j] = match (i < n1, j < n2) {
                    (true, true) => real[i * n2 + j].logit,
                    (true, false) => row_pad[i].logit,
                    (false, true) => col_pad[j].logit,
                    (false, false) => both_pad.as_ref().map_or(0.0, |u| u.logit),
                };
            }
        }
        let s = Tensor::new(vec![n, n], z.iter().map(|&v| sigmoid(v)).collect())?;
        let values = match self.config.score_space {
            ScoreSpace::Logit => Tensor::new(vec![n, n], z)?,
            ScoreSpace::Probability => s.clone(),
        };
        let bundle = augment_normalize(&s, &values, self.config.delta, n1, n2, self.config.score_space, self.config.softmax_axis)?;
        Ok(Forward { bundle, real, row_pad, col_pad, both_pad })
    }

    /// Affinity loss for one frame pair. Scorer gradients scaled by `weight`
    /// are added to `grads`.
    pub fn affinity_backward(
        &self,
        a: &[ObjectDescriptor],
        b: &[ObjectDescriptor],
        m: &MatchMatrix,
        weight: f64,
        grads: &mut [f64],
    ) -> Result<(f64, SimilarityBundle), MatchingError> {
        let fw = self.forward(a, b)?;
        let (loss, g) = loss_affinity_grad(&fw.bundle, m)?;
        let n = self.config.capacity;
        let (n1, n2) = (a.len(), b.len());
        let s = fw.bundle.s.data();
        let dz = |k: usize| -> f64 {
            let chain = match self.config.score_space {
                ScoreSpace::Logit => 1.0,
                ScoreSpace::Probability => s[k] * (1.0 - s[k]),
            };
            g[k] * chain * weight
        };
        let mut row_up = vec![0.0; n1];
        let mut col_up = vec![0.0; n2];
        let mut both_up = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d = dz(i * n + j);
                match (i < n1, j < n2) {
                    (true, true) => {
                        self.scorer.backward(&fw.real[i * n2 + j].trace, &[d], grads)?;
                    }
                    (true, false) => row_up[i] += d,
                    (false, true) => col_up[j] += d,
                    (false, false) => both_up += d,
                }
            }
        }
        for (u, d) in fw.row_pad.iter().zip(&row_up) {
            self.scorer.backward(&u.trace, &[*d], grads)?;
        }
        for (u, d) in fw.col_pad.iter().zip(&col_up) {
            self.scorer.backward(&u.trace, &[*d], grads)?;
        }
        if let Some(u) = &fw.both_pad {
            self.scorer.backward(&u.trace, &[both_up], grads)?;
        }
        Ok((loss, fw.bundle))
    }
}

impl Affinity for Matcher {
    fn capacity(&self) -> usize {
        self.config.capacity
    }

    fn similarity(&self, a: &[ObjectDescriptor], b: &[ObjectDescriptor]) -> Result<SimilarityBundle, MatchingError> {
        Ok(self.forward(a, b)?.bundle)
    }
}
