use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_joint, Affinity, Matcher, MatcherConfig, MatchingError, ObjectDescriptor, SimilarityBundle};
use crate::numerics::SgdMomentum;
use crate::scene::{write_atomic, MatchMatrix};

/// One detection in a training pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleObject {
    pub descriptor: ObjectDescriptor,
    /// Encoded pose target; `None` for detections without ground truth.
    pub pose_target: Option<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingSample {
    pub frame_a: Vec<SampleObject>,
    pub frame_b: Vec<SampleObject>,
    pub matrix: MatchMatrix,
}

impl MatchingSample {
    pub fn descriptors(&self) -> (Vec<ObjectDescriptor>, Vec<ObjectDescriptor>) {
        let take = |v: &[SampleObject]| v.iter().map(|o| o.descriptor.clone()).collect();
        (take(&self.frame_a), take(&self.frame_b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub affinity_loss: f64,
    pub pose_loss: f64,
    pub joint_loss: f64,
    /// Association accuracy on the training pairs seen this epoch.
    pub accuracy: f64,
    pub learning_rate: f64,
}

/// Serialized training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Number of completed epochs.
    pub epoch: usize,
    pub matcher: Matcher,
    pub scorer_velocity: Vec<f64>,
    pub pose_velocity: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "geoloc-matcher";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(matcher: Matcher, epoch: usize, scorer: &SgdMomentum, pose: &SgdMomentum) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            epoch,
            matcher,
            scorer_velocity: scorer.velocity.clone(),
            pose_velocity: pose.velocity.clone(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, MatchingError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ck: Checkpoint =
            serde_path_to_error::deserialize(de).map_err(|e| MatchingError::Checkpoint(format!("{}: {}", e.path(), e.inner())))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(MatchingError::Checkpoint(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        ck.matcher.validate()?;
        let scorer_ok = ck.scorer_velocity.is_empty() || ck.scorer_velocity.len() == ck.matcher.scorer.num_params();
        let pose_ok = ck.pose_velocity.is_empty() || ck.pose_velocity.len() == ck.matcher.pose_head.num_params();
        if !scorer_ok || !pose_ok || ck.scorer_velocity.iter().chain(&ck.pose_velocity).any(|v| !v.is_finite()) {
            return Err(MatchingError::Checkpoint("optimizer state does not fit the networks".into()));
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), MatchingError> {
    write_atomic(path, ck.to_json().as_bytes()).map_err(|e| MatchingError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, MatchingError> {
    let text = std::fs::read_to_string(path).map_err(|e| MatchingError::Checkpoint(format!("{}: {e}", path.display())))?;
    Checkpoint::from_json_str(&text)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub matcher: Matcher,
    pub history: Vec<EpochMetrics>,
    pub checkpoint: Checkpoint,
}

const AUGMENT_SEED: u64 = 0xA5A5_5A5A_0F0F_F0F0;

/// Applies one random channel permutation with sign flips to every
/// appearance vector of both frames.
fn shuffle_appearance(a: &mut [ObjectDescriptor], b: &mut [ObjectDescriptor], rng: &mut ChaCha8Rng) {
    let Some(dim) = a.iter().chain(b.iter()).map(|d| d.appearance.len()).next() else {
        return;
    };
    let mut perm: Vec<usize> = (0..dim).collect();
    perm.shuffle(rng);
    let signs: Vec<f64> = (0..dim).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    for d in a.iter_mut().chain(b.iter_mut()) {
        let src = d.appearance.clone();
        for (k, v) in d.appearance.iter_mut().enumerate() {
            *v = signs[k] * src[perm[k]];
        }
    }
}

/// Trains scorer and pose head with SGD + momentum.
///
/// Each epoch visits the samples in a seeded random order in mini-batches.
/// With `lambda == 0` the pose head is left untouched.
pub fn train_matcher(
    data: &[MatchingSample],
    config: &MatcherConfig,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome, MatchingError> {
    config.validate()?;
    if data.is_empty() {
        return Err(MatchingError::EmptyDataset);
    }
    let (mut matcher, start, mut opt_s, mut opt_p) = match resume {
        Some(ck) => {
            let mut m = ck.matcher;
            m.config.epochs = config.epochs;
            m.validate()?;
            let mut os = SgdMomentum::new(m.scorer.num_params(), config.momentum, config.weight_decay);
            let mut op = SgdMomentum::new(m.pose_head.num_params(), config.momentum, config.weight_decay);
            if !ck.scorer_velocity.is_empty() {
                os.velocity = ck.scorer_velocity;
            }
            if !ck.pose_velocity.is_empty() {
                op.velocity = ck.pose_velocity;
            }
            (m, ck.epoch, os, op)
        }
        None => {
            let m = Matcher::new(config.clone())?;
            let os = SgdMomentum::new(m.scorer.num_params(), config.momentum, config.weight_decay);
            let op = SgdMomentum::new(m.pose_head.num_params(), config.momentum, config.weight_decay);
            (m, 0, os, op)
        }
    };
    let cfg = matcher.config.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in start..config.epochs {
        let lr = cfg.lr.rate(epoch, config.epochs);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let (mut aff_sum, mut pose_sum, mut joint_sum) = (0.0, 0.0, 0.0);
        let (mut correct, mut total) = (0usize, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let w = 1.0 / batch.len() as f64;
            let mut gs = vec![0.0; matcher.scorer.num_params()];
            let mut gp = vec![0.0; matcher.pose_head.num_params()];
            for &idx in batch {
                let sample = &data[idx];
                let (mut a, mut b) = sample.descriptors();
                if cfg.augment_appearance {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUGMENT_SEED);
                    rng.set_stream((epoch as u64).wrapping_mul(0x1_0000_0000).wrapping_add(idx as u64));
                    shuffle_appearance(&mut a, &mut b, &mut rng);
                }
                let (l_aff, bundle) = matcher.affinity_backward(&a, &b, &sample.matrix, w, &mut gs)?;
                let targets: Vec<_> = sample
                    .frame_a
                    .iter()
                    .chain(&sample.frame_b)
                    .filter_map(|o| o.pose_target.map(|t| (o.descriptor.embedding(), t)))
                    .collect();
                let mut pose_losses = Vec::with_capacity(targets.len());
                let pw = cfg.lambda * w / targets.len().max(1) as f64;
                for (g, t) in &targets {
                    let l = if cfg.lambda > 0.0 {
                        matcher.pose_head.loss_grad(g, t, cfg.beta, pw, &mut gp)?
                    } else {
                        let p = matcher.pose_head.predict(g)?;
                        crate::numerics::loss_pose(t, &p, cfg.beta).value
                    };
                    pose_losses.push(l);
                }
                let joint = loss_joint(l_aff, &pose_losses, cfg.lambda);
                if !joint.is_finite() {
                    return Err(MatchingError::NonFiniteLoss { epoch, step, detail: format!("sample {idx}: {joint}") });
                }
                aff_sum += l_aff;
                if !pose_losses.is_empty() {
                    pose_sum += pose_losses.iter().sum::<f64>() / pose_losses.len() as f64;
                }
                joint_sum += joint;
                let (c, t) = association_accuracy(&bundle, &sample.matrix);
                correct += c;
                total += t;
            }
            if gs.iter().chain(&gp).any(|g| !g.is_finite()) {
                return Err(MatchingError::NonFiniteLoss { epoch, step, detail: "non-finite gradient".into() });
            }
            opt_s.step(matcher.scorer.params_mut(), &gs, lr);
            if cfg.lambda > 0.0 {
                let mut p = matcher.pose_head.params();
                opt_p.step(&mut p, &gp, lr);
                matcher.pose_head.set_params(&p);
            }
        }
        let n = data.len() as f64;
        let m = EpochMetrics {
            epoch,
            affinity_loss: aff_sum / n,
            pose_loss: pose_sum / n,
            joint_loss: joint_sum / n,
            accuracy: if total == 0 { 1.0 } else { correct as f64 / total as f64 },
            learning_rate: lr,
        };
        log::info!(
            "epoch {epoch}: L_aff {:.4} pose {:.4} acc {:.3}",
            m.affinity_loss,
            m.pose_loss,
            m.accuracy
        );
        history.push(m);
    }
    matcher.config.epochs = config.epochs;
    let checkpoint = Checkpoint::new(matcher.clone(), config.epochs.max(start), &opt_s, &opt_p);
    Ok(TrainOutcome { matcher, history, checkpoint })
}

/// Per-object association accuracy: every real object in either frame
/// predicts the argmax of the fused similarity over the real objects of the
/// other frame plus the null slot. Returns `(correct, total)`.
pub fn association_accuracy(bundle: &SimilarityBundle, m: &MatchMatrix) -> (usize, usize) {
    let n = bundle.capacity;
    let f = &bundle.fused;
    let argmax = |cands: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut best = (n, f64::NEG_INFINITY);
        for (k, v) in cands {
            if v > best.1 {
                best = (k, v);
            }
        }
        best.0
    };
    let mut correct = 0;
    for i in 0..bundle.n1 {
        let j = argmax(&mut (0..bundle.n2).chain([n]).map(|j| (j, f.get(&[i, j]))));
        correct += usize::from(m.get(i, j) == 1);
    }
    for j in 0..bundle.n2 {
        let i = argmax(&mut (0..bundle.n1).chain([n]).map(|i| (i, f.get(&[i, j]))));
        correct += usize::from(m.get(i, j) == 1);
    }
    (correct, bundle.n1 + bundle.n2)
}

/// Average precision of `scores` ranked in descending order (stable for ties);
/// `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &k) in idx.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Mean over frame pairs of the average precision of real–real pairs ranked
/// by fused similarity. Frame pairs without a true match are skipped.
pub fn match_accuracy_map(items: &[(SimilarityBundle, MatchMatrix)]) -> Option<f64> {
    let aps: Vec<f64> = items
        .iter()
        .filter_map(|(b, m)| {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for i in 0..b.n1 {
                for j in 0..b.n2 {
                    scores.push(b.fused.get(&[i, j]));
                    labels.push(m.get(i, j) == 1);
                }
            }
            average_precision(&scores, &labels)
        })
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherEvaluation {
    pub accuracy: f64,
    pub map: Option<f64>,
    pub pairs: usize,
}

/// Association accuracy and mAP of any affinity model on held-out pairs.
pub fn evaluate_matcher<A: Affinity + ?Sized>(model: &A, data: &[MatchingSample]) -> Result<MatcherEvaluation, MatchingError> {
    let mut items = Vec::with_capacity(data.len());
    let (mut correct, mut total) = (0, 0);
    for s in data {
        let (a, b) = s.descriptors();
        let bundle = model.similarity(&a, &b)?;
        let (c, t) = association_accuracy(&bundle, &s.matrix);
        correct += c;
        total += t;
        items.push((bundle, s.matrix.clone()));
    }
    Ok(MatcherEvaluation {
        accuracy: if total == 0 { 1.0 } else { correct as f64 / total as f64 },
        map: match_accuracy_map(&items),
        pairs: data.len(),
    })
}
