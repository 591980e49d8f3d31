//! Tracking and geo-localization metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::solve_partial;
use crate::geometry::{angular_error, world_to_camera, EgoPose, FrameId, GeometryError};
use crate::scene::{BBox, MotRow, SceneSequence};
use crate::tracker::GeoLocation;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid criterion: {0}")]
    Criterion(String),
    #[error("no matched pairs")]
    NoPairs,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// CLEAR-MOT summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
    pub id_switches: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub matches: usize,
    /// Ground-truth boxes over all frames.
    pub gt_boxes: usize,
    pub gt_trajectories: usize,
    pub frames: usize,
}

type FrameBoxes = BTreeMap<u32, Vec<(u64, BBox)>>;

fn by_frame(rows: &[MotRow], what: &str) -> Result<FrameBoxes, EvalError> {
    let mut out: FrameBoxes = BTreeMap::new();
    for r in rows {
        let id = r.id.ok_or_else(|| EvalError::Format(format!("{what} row in frame {} has no id", r.frame)))?;
        out.entry(r.frame).or_default().push((id, r.bbox));
    }
    for (f, v) in &mut out {
        v.sort_by_key(|e| e.0);
        if v.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(EvalError::Format(format!("{what} id repeated in frame {f}")));
        }
    }
    Ok(out)
}

/// CLEAR-MOT metrics with IoU correspondence.
///
/// A correspondence from an earlier frame is kept while its IoU stays at or
/// above `iou_threshold`; remaining boxes are matched by maximum-cardinality,
/// maximum-IoU assignment. A ground-truth object whose matched hypothesis
/// differs from its previous one counts as an identity switch. Mostly
/// tracked / lost use 80 % / 20 % coverage. Without ground truth, MOTA is 1
/// when there are no false positives and 0 otherwise.
pub fn mot_metrics(gt: &[MotRow], hyp: &[MotRow], iou_threshold: f64) -> Result<MotReport, EvalError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(EvalError::Criterion(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let gt_frames = by_frame(gt, "ground-truth")?;
    let hyp_frames = by_frame(hyp, "hypothesis")?;
    let frames: BTreeSet<u32> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    let empty = Vec::new();
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut coverage: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    let (mut fp, mut fn_, mut ids, mut matches, mut gt_boxes) = (0, 0, 0, 0, 0);
    let mut iou_sum = 0.0;
    for f in &frames {
        let gs = gt_frames.get(f).unwrap_or(&empty);
        let hs = hyp_frames.get(f).unwrap_or(&empty);
        let mut g_used = vec![false; gs.len()];
        let mut h_used = vec![false; hs.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (gi, (gid, gb)) in gs.iter().enumerate() {
            if let Some(&hid) = last.get(gid) {
                if let Some(hi) = hs.iter().position(|(h, _)| *h == hid) {
                    let iou = gb.iou(&hs[hi].1);
                    if iou >= iou_threshold && !h_used[hi] {
                        g_used[gi] = true;
                        h_used[hi] = true;
                        pairs.push((gi, hi, iou));
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..gs.len()).filter(|&i| !g_used[i]).collect();
        let free_h: Vec<usize> = (0..hs.len()).filter(|&i| !h_used[i]).collect();
        let weights: Vec<Vec<Option<f64>>> = free_g
            .iter()
            .map(|&gi| {
                free_h
                    .iter()
                    .map(|&hi| {
                        let iou = gs[gi].1.iou(&hs[hi].1);
                        (iou >= iou_threshold).then_some(iou)
                    })
                    .collect()
            })
            .collect();
        if !free_h.is_empty() {
            for (k, choice) in solve_partial(&weights).expect("weights are finite").into_iter().enumerate() {
                if let Some(c) = choice {
                    let (gi, hi) = (free_g[k], free_h[c]);
                    pairs.push((gi, hi, gs[gi].1.iou(&hs[hi].1)));
                }
            }
        }
        for &(gi, hi, iou) in &pairs {
            let (gid, hid) = (gs[gi].0, hs[hi].0);
            if last.get(&gid).is_some_and(|&prev| prev != hid) {
                ids += 1;
            }
            last.insert(gid, hid);
            iou_sum += iou;
            coverage.entry(gid).or_default().0 += 1;
        }
        for (gid, _) in gs {
            coverage.entry(*gid).or_default().1 += 1;
        }
        matches += pairs.len();
        gt_boxes += gs.len();
        fn_ += gs.len() - pairs.len();
        fp += hs.len() - pairs.len();
    }
    let mota = if gt_boxes == 0 {
        if fp == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - (fn_ + fp + ids) as f64 / gt_boxes as f64
    };
    let ratio = |(hit, present): &(usize, usize)| *hit as f64 / *present as f64;
    Ok(MotReport {
        mota,
        motp: if matches == 0 { 0.0 } else { iou_sum / matches as f64 },
        mostly_tracked: coverage.values().filter(|c| ratio(c) >= 0.8).count(),
        mostly_lost: coverage.values().filter(|c| ratio(c) < 0.2).count(),
        id_switches: ids,
        false_positives: fp,
        false_negatives: fn_,
        matches,
        gt_boxes,
        gt_trajectories: coverage.len(),
        frames: frames.len(),
    })
}

/// `sqrt(Σ (limit·Δ_a / semi_a)²)`: equals `limit` on the ellipsoid with
/// the given semi-axes.
pub fn mahalanobis_distance(delta: &Vector3<f64>, semi_axes: &Vector3<f64>, limit: f64) -> f64 {
    (0..3).map(|a| (delta[a] / semi_axes[a] * limit).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceKind {
    Euclidean { radius: f64 },
    Mahalanobis { limit: f64, semi_axes: [f64; 3] },
}

/// Acceptance rule for a predicted location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCriterion {
    pub distance: DistanceKind,
    /// Maximum facing-direction error in degrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_gate: Option<f64>,
}

impl GeoCriterion {
    pub fn euclidean(radius: f64) -> Self {
        Self { distance: DistanceKind::Euclidean { radius }, rotation_gate: None }
    }

    pub fn mahalanobis(limit: f64, semi_axes: [f64; 3]) -> Self {
        Self { distance: DistanceKind::Mahalanobis { limit, semi_axes }, rotation_gate: None }
    }

    pub fn with_rotation_gate(self, degrees: f64) -> Self {
        Self { rotation_gate: Some(degrees), ..self }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = match self.distance {
            DistanceKind::Euclidean { radius } => radius > 0.0 && radius.is_finite(),
            DistanceKind::Mahalanobis { limit, semi_axes } => {
                limit > 0.0 && limit.is_finite() && semi_axes.iter().all(|s| *s > 0.0 && s.is_finite())
            }
        };
        let gate_ok = self.rotation_gate.is_none_or(|g| g >= 0.0 && g.is_finite());
        if ok && gate_ok {
            Ok(())
        } else {
            Err(EvalError::Criterion(format!("{self:?}")))
        }
    }

    pub fn distance(&self, delta: &Vector3<f64>) -> f64 {
        match self.distance {
            DistanceKind::Euclidean { .. } => delta.norm(),
            DistanceKind::Mahalanobis { limit, semi_axes } => mahalanobis_distance(delta, &semi_axes.into(), limit),
        }
    }

    pub fn threshold(&self) -> f64 {
        match self.distance {
            DistanceKind::Euclidean { radius } => radius,
            DistanceKind::Mahalanobis { limit, .. } => limit,
        }
    }

    /// Distance when the prediction is acceptable, `None` otherwise.
    pub fn accept(&self, pred: &GeoPoint, gt: &GeoPoint) -> Option<f64> {
        let d = self.distance(&(pred.t - gt.t));
        let rot_ok = self.rotation_gate.is_none_or(|g| angular_error(&pred.r, &gt.r) <= g);
        (d <= self.threshold() && rot_ok).then_some(d)
    }
}

/// A location in evaluation axes (the scene reference camera frame) with a
/// ranking score and identifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub id: u64,
    pub t: Vector3<f64>,
    pub r: Vector2<f64>,
    pub score: f64,
}

/// Tracker output expressed in the evaluation axes; score = instance count.
pub fn predictions_in_reference(locations: &[GeoLocation], reference: &EgoPose) -> Result<Vec<GeoPoint>, EvalError> {
    locations
        .iter()
        .map(|l| {
            let p = world_to_camera(&l.pose, reference, FrameId::Reference)?;
            Ok(GeoPoint { id: l.track_id, t: p.t, r: p.r, score: l.instances as f64 })
        })
        .collect()
}

/// Ground-truth objects of a scene in the evaluation axes.
pub fn ground_truth_in_reference(scene: &SceneSequence) -> Result<Vec<GeoPoint>, EvalError> {
    scene
        .gt_objects()
        .values()
        .map(|g| {
            let p = world_to_camera(&g.pose, &scene.reference_ego, FrameId::Reference)?;
            Ok(GeoPoint { id: g.object_id as u64, t: p.t, r: p.r, score: 1.0 })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Score of the last prediction admitted at this point.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

fn ranked(preds: &[GeoPoint]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(preds[a].id.cmp(&preds[b].id)));
    order
}

/// Greedy one-to-one assignment in descending score order: each prediction
/// takes the closest still-unmatched ground truth that passes `criterion`.
/// Returns `(prediction index, gt index or None)` in processing order.
pub fn greedy_match(preds: &[GeoPoint], gts: &[GeoPoint], criterion: &GeoCriterion) -> Vec<(usize, Option<usize>)> {
    let mut taken = vec![false; gts.len()];
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| gts[g].id);
    ranked(preds)
        .into_iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for &g in &gt_order {
                if taken[g] {
                    continue;
                }
                if let Some(d) = criterion.accept(&preds[p], &gts[g]) {
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((g, d));
                    }
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (p, best.map(|b| b.0))
        })
        .collect()
}

/// Precision/recall after each distinct score threshold, from the strictest
/// to the loosest. Recall is zero when there is no ground truth.
pub fn pr_curve(preds: &[GeoPoint], gts: &[GeoPoint], criterion: &GeoCriterion) -> Result<Vec<PrPoint>, EvalError> {
    criterion.validate()?;
    let matched = greedy_match(preds, gts, criterion);
    let mut out: Vec<PrPoint> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &(p, g)) in matched.iter().enumerate() {
        if g.is_some() {
            tp += 1;
        } else {
            fp += 1;
        }
        let score = preds[p].score;
        let last_of_tie = matched.get(k + 1).is_none_or(|&(q, _)| preds[q].score != score);
        if last_of_tie {
            out.push(PrPoint {
                threshold: score,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 },
                true_positives: tp,
                false_positives: fp,
            });
        }
    }
    Ok(out)
}

/// Area under the PR curve by rectangles at each recall step.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in points {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    /// Per-axis statistics of absolute errors, `[x, y, z]`.
    pub mean: [f64; 3],
    pub median: [f64; 3],
    /// Population standard deviation.
    pub std: [f64; 3],
}

/// Per-axis absolute translation errors of `(prediction, ground truth)` pairs.
pub fn translation_error_stats(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<ErrorStats, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let n = pairs.len() as f64;
    let mut stats = ErrorStats { count: pairs.len(), mean: [0.0; 3], median: [0.0; 3], std: [0.0; 3] };
    for a in 0..3 {
        let mut e: Vec<f64> = pairs.iter().map(|(p, g)| (p[a] - g[a]).abs()).collect();
        let mean = e.iter().sum::<f64>() / n;
        stats.mean[a] = mean;
        stats.std[a] = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        e.sort_by(f64::total_cmp);
        let k = e.len();
        stats.median[a] = if k % 2 == 1 { e[k / 2] } else { (e[k / 2 - 1] + e[k / 2]) / 2.0 };
    }
    Ok(stats)
}

/// Matched `(prediction, ground truth)` translations under `criterion`.
pub fn matched_translations(preds: &[GeoPoint], gts: &[GeoPoint], criterion: &GeoCriterion) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    greedy_match(preds, gts, criterion).into_iter().filter_map(|(p, g)| g.map(|g| (preds[p].t, gts[g].t))).collect()
}

/// Combined report written by the evaluate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mot: Option<MotReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<GeoCriterion>,
    #[serde(default)]
    pub pr_curve: Vec<PrPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_errors: Option<ErrorStats>,
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall,true_positives,false_positives\n");
    for p in points {
        out.push_str(&format!("{},{},{},{},{}\n", p.threshold, p.precision, p.recall, p.true_positives, p.false_positives));
    }
    out
}

pub fn mot_csv(r: &MotReport) -> String {
    format!(
        "mota,motp,mostly_tracked,mostly_lost,id_switches,false_positives,false_negatives,matches,gt_boxes,gt_trajectories,frames\n{},{},{},{},{},{},{},{},{},{},{}\n",
        r.mota,
        r.motp,
        r.mostly_tracked,
        r.mostly_lost,
        r.id_switches,
        r.false_positives,
        r.false_negatives,
        r.matches,
        r.gt_boxes,
        r.gt_trajectories,
        r.frames
    )
}
