use serde::{Deserialize, Serialize};

use super::{augment_normalize, Affinity, MatchingError, ObjectDescriptor, ScoreSpace, SimilarityBundle, SoftmaxAxis};
use crate::numerics::{sigmoid, Tensor};

/// Untrained affinity from reference-frame distance and appearance cosine.
///
/// `logit = bias − ½·(Δx² + Δy²)/σ_lat² − ½·Δz²/(σ_rel·z̄)² − w·(1 − cos)`,
/// where `z̄` is the mean depth of the pair. Padded entries get `padding_logit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometricAffinity {
    pub capacity: usize,
    pub delta: f64,
    pub bias: f64,
    pub lateral_sigma: f64,
    pub depth_sigma: f64,
    pub appearance_weight: f64,
    pub padding_logit: f64,
}

impl Default for GeometricAffinity {
    fn default() -> Self {
        Self {
            capacity: 30,
            delta: 8.0,
            bias: 14.0,
            lateral_sigma: 1.0,
            depth_sigma: 0.15,
            appearance_weight: 8.0,
            padding_logit: -30.0,
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || a.len() != b.len() {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl GeometricAffinity {
    pub fn logit(&self, a: &ObjectDescriptor, b: &ObjectDescriptor) -> f64 {
        let (ga, gb) = (&a.geometry, &b.geometry);
        let lat = ((ga[0] - gb[0]).powi(2) + (ga[1] - gb[1]).powi(2)) / self.lateral_sigma.powi(2);
        let zbar = ((ga[2] + gb[2]) / 2.0).abs().max(1.0);
        let dep = (ga[2] - gb[2]).powi(2) / (self.depth_sigma * zbar).powi(2);
        self.bias - 0.5 * (lat + dep) - self.appearance_weight * (1.0 - cosine(&a.appearance, &b.appearance))
    }
}

impl Affinity for GeometricAffinity {
    fn capacity(&self) -> usize {
        self.capacity
    }

    fn similarity(&self, a: &[ObjectDescriptor], b: &[ObjectDescriptor]) -> Result<SimilarityBundle, MatchingError> {
        let n = self.capacity;
        if a.len().max(b.len()) > n {
            return Err(MatchingError::CapacityExceeded { count: a.len().max(b.len()), capacity: n });
        }
        if a.iter().chain(b).any(|d| d.geometry.len() < 3) {
            return Err(MatchingError::ShapeMismatch("descriptor without a translation".into()));
        }
        let mut z = vec![self.padding_logit; n * n];
        for (i, da) in a.iter().enumerate() {
            for (j, db) in b.iter().enumerate() {
                z[i * n + j] = self.logit(da, db);
            }
        }
        let s = Tensor::new(vec![n, n], z.iter().map(|&v| sigmoid(v)).collect())?;
        let values = Tensor::new(vec![n, n], z)?;
        augment_normalize(&s, &values, self.delta, a.len(), b.len(), ScoreSpace::Logit, SoftmaxAxis::Candidates)
    }
}
