//! Online tracking-by-detection of static objects.
//!
//! Each incoming frame is scored against every active track, assigned with
//! the Hungarian solver over an `m×(n+m)` matrix whose right block holds one
//! null column per track, and the matched instances refresh the per-track
//! pose aggregate.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{solve_max, AssignmentError};
use crate::geometry::{camera_to_world, normalize_rotation, EgoPose, FrameId, GeometryError, Pose5D};
use crate::matching::{frame_descriptors, Affinity, MatchingError, ObjectDescriptor, SimilarityBundle};
use crate::scene::{BBox, FrameRecord, MotRow, SceneSequence};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("frame {got} arrived after frame {previous}")]
    OutOfOrderFrame { previous: u32, got: u32 },
    #[error("cannot aggregate a track without instances")]
    EmptyTrack,
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
    /// Mean weighted by the inverse observation depth.
    InverseDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Most recent instances kept per track.
    pub buffer: usize,
    pub aggregation: Aggregation,
    /// Tracks observed fewer times are dropped by [`finalize`].
    pub min_instances: usize,
    /// Matches scoring below this are treated as unmatched.
    pub min_similarity: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { buffer: 10, aggregation: Aggregation::Median, min_instances: 2, min_similarity: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackInstance {
    pub frame_index: u32,
    /// Position of the detection within its frame.
    pub detection: usize,
    pub descriptor: ObjectDescriptor,
    /// Reference-frame pose.
    pub pose: Pose5D,
    /// Camera depth at observation time.
    pub depth: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    /// Oldest first, at most `buffer` entries.
    pub instances: Vec<TrackInstance>,
    /// Total number of observations, including evicted instances.
    pub observations: usize,
    pub aggregated: Pose5D,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_index: u32,
    pub assignment: AssignmentResult,
    /// Track id given to each detection of the frame.
    pub detection_tracks: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub config: TrackerConfig,
    pub reference: EgoPose,
    pub tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
    /// Descriptor sets of past frames still referenced by some instance.
    frames: BTreeMap<u32, Vec<ObjectDescriptor>>,
}

/// Builds the `m×(n+m)` score matrix.
///
/// `s[i][j]` (j < n) is the largest fused similarity between any buffered
/// instance of track `i` and detection `j`; `s[i][n+i]` is the mean null
/// probability of those instances; every other right-block entry is `-inf`.
pub fn score_matrix<A: Affinity + ?Sized>(
    tracks: &[Track],
    detections: &[ObjectDescriptor],
    past: &BTreeMap<u32, Vec<ObjectDescriptor>>,
    matcher: &A,
) -> Result<Vec<Vec<f64>>, TrackerError> {
    let (m, n) = (tracks.len(), detections.len());
    let needed: BTreeSet<u32> = tracks.iter().flat_map(|t| t.instances.iter().map(|i| i.frame_index)).collect();
    let mut bundles: BTreeMap<u32, SimilarityBundle> = BTreeMap::new();
    for f in needed {
        let descs = past.get(&f).ok_or_else(|| MatchingError::ShapeMismatch(format!("frame {f} is not cached")))?;
        bundles.insert(f, matcher.similarity(descs, detections)?);
    }
    let mut score = vec![vec![f64::NEG_INFINITY; n + m]; m];
    for (i, track) in tracks.iter().enumerate() {
        let mut null = 0.0;
        for inst in &track.instances {
            let b = &bundles[&inst.frame_index];
            for j in 0..n {
                score[i][j] = score[i][j].max(b.fused.get(&[inst.detection, j]));
            }
            null += b.s1n.get(&[inst.detection, b.capacity]);
        }
        score[i][n + i] = null / track.instances.len().max(1) as f64;
    }
    Ok(score)
}

/// Maximum-score assignment of tracks to detections or to their null column.
/// `n` is the number of detections; rows must have `n + m` entries.
pub fn hungarian(score: &[Vec<f64>], n: usize) -> Result<AssignmentResult, TrackerError> {
    let m = score.len();
    if score.iter().any(|r| r.len() != n + m) {
        return Err(AssignmentError::Ragged.into());
    }
    let assign = solve_max(score)?;
    let mut result = AssignmentResult::default();
    let mut taken = vec![false; n];
    for (i, &c) in assign.iter().enumerate() {
        if c < n {
            result.matches.push((i, c));
            taken[c] = true;
        } else {
            result.unmatched_tracks.push(i);
        }
    }
    result.unmatched_detections = (0..n).filter(|&j| !taken[j]).collect();
    Ok(result)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

/// Aggregated reference-frame pose of a set of instances.
pub fn aggregate_pose(instances: &[TrackInstance], method: Aggregation) -> Result<Pose5D, TrackerError> {
    let first = instances.first().ok_or(TrackerError::EmptyTrack)?;
    let comp = |f: &dyn Fn(&TrackInstance) -> f64| -> f64 {
        let vals: Vec<f64> = instances.iter().map(f).collect();
        match method {
            Aggregation::Median => median(vals),
            Aggregation::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            Aggregation::InverseDepth => {
                let w: Vec<f64> = instances.iter().map(|i| 1.0 / i.depth).collect();
                vals.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / w.iter().sum::<f64>()
            }
        }
    };
    let t = Vector3::new(comp(&|i| i.pose.t.x), comp(&|i| i.pose.t.y), comp(&|i| i.pose.t.z));
    let r = Vector2::new(comp(&|i| i.pose.r.x), comp(&|i| i.pose.r.y));
    let r = normalize_rotation(r).unwrap_or(first.pose.r);
    Ok(Pose5D { t, r, frame: FrameId::Reference })
}

/// One geo-located object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoLocation {
    pub track_id: u64,
    /// World-frame pose.
    pub pose: Pose5D,
    /// Number of frames the track was observed in.
    pub instances: usize,
}

impl TrackerState {
    pub fn new(config: TrackerConfig, reference: EgoPose) -> Self {
        Self { config, reference, tracks: Vec::new(), next_id: 1, last_frame: None, frames: BTreeMap::new() }
    }

    /// Consumes one frame: scores, assigns, extends and spawns tracks.
    pub fn step<A: Affinity + ?Sized>(&mut self, frame: &FrameRecord, matcher: &A) -> Result<FrameOutput, TrackerError> {
        if let Some(prev) = self.last_frame {
            if frame.frame_index <= prev {
                return Err(TrackerError::OutOfOrderFrame { previous: prev, got: frame.frame_index });
            }
        }
        let descs = frame_descriptors(frame, &self.reference)?;
        if descs.len() > matcher.capacity() {
            return Err(MatchingError::CapacityExceeded { count: descs.len(), capacity: matcher.capacity() }.into());
        }
        let score = score_matrix(&self.tracks, &descs, &self.frames, matcher)?;
        let mut result = hungarian(&score, descs.len())?;
        if let Some(min) = self.config.min_similarity {
            let (keep, drop): (Vec<_>, Vec<_>) = result.matches.iter().partition(|&&(i, j)| score[i][j] >= min);
            for (i, j) in drop {
                result.unmatched_tracks.push(i);
                result.unmatched_detections.push(j);
            }
            result.matches = keep;
            result.unmatched_tracks.sort_unstable();
            result.unmatched_detections.sort_unstable();
        }

        let mut detection_tracks = vec![0u64; descs.len()];
        let instance = |j: usize| -> Result<TrackInstance, TrackerError> {
            let det = &frame.detections[j];
            let obs = det.observation.as_ref().ok_or(MatchingError::MissingFeature("a pose observation"))?;
            let g = &descs[j].geometry;
            let pose = Pose5D { t: Vector3::new(g[0], g[1], g[2]), r: Vector2::new(g[3], g[4]), frame: FrameId::Reference };
            Ok(TrackInstance {
                frame_index: frame.frame_index,
                detection: j,
                descriptor: descs[j].clone(),
                pose,
                depth: obs.depth,
                bbox: det.bbox,
            })
        };
        for &(i, j) in &result.matches {
            let inst = instance(j)?;
            let track = &mut self.tracks[i];
            track.instances.push(inst);
            if track.instances.len() > self.config.buffer.max(1) {
                track.instances.remove(0);
            }
            track.observations += 1;
            track.aggregated = aggregate_pose(&track.instances, self.config.aggregation)?;
            detection_tracks[j] = track.track_id;
        }
        for &j in &result.unmatched_detections {
            let inst = instance(j)?;
            let track = Track {
                track_id: self.next_id,
                aggregated: inst.pose,
                instances: vec![inst],
                observations: 1,
            };
            detection_tracks[j] = track.track_id;
            self.next_id += 1;
            self.tracks.push(track);
        }

        self.frames.insert(frame.frame_index, descs);
        let live: BTreeSet<u32> = self.tracks.iter().flat_map(|t| t.instances.iter().map(|i| i.frame_index)).collect();
        self.frames.retain(|f, _| live.contains(f));
        self.last_frame = Some(frame.frame_index);
        Ok(FrameOutput { frame_index: frame.frame_index, assignment: result, detection_tracks })
    }

    /// World-frame poses of tracks observed at least `min_instances` times.
    pub fn finalize(&self, min_instances: usize) -> Result<Vec<GeoLocation>, TrackerError> {
        self.tracks
            .iter()
            .filter(|t| t.observations >= min_instances)
            .map(|t| {
                Ok(GeoLocation {
                    track_id: t.track_id,
                    pose: camera_to_world(&t.aggregated, &self.reference)?,
                    instances: t.observations,
                })
            })
            .collect()
    }
}

/// Tracker output for a whole scene.
#[derive(Debug, Clone)]
pub struct SceneTracking {
    pub state: TrackerState,
    pub frames: Vec<FrameOutput>,
    /// MOT rows, one per tracked detection, with the instance's world position.
    pub hypotheses: Vec<MotRow>,
    pub locations: Vec<GeoLocation>,
}

/// Runs the tracker over every frame of `scene` and finalizes it.
pub fn track_scene<A: Affinity + ?Sized>(
    scene: &SceneSequence,
    matcher: &A,
    config: &TrackerConfig,
) -> Result<SceneTracking, TrackerError> {
    let mut state = TrackerState::new(config.clone(), scene.reference_ego);
    let mut frames = Vec::with_capacity(scene.frames.len());
    let mut hypotheses = Vec::new();
    for frame in &scene.frames {
        let out = state.step(frame, matcher)?;
        for (j, &id) in out.detection_tracks.iter().enumerate() {
            let det = &frame.detections[j];
            let track = state.tracks.iter().find(|t| t.track_id == id).expect("track exists");
            let inst = track.instances.last().expect("instance just added");
            let world = camera_to_world(&inst.pose, &scene.reference_ego)?;
            hypotheses.push(MotRow { frame: frame.frame_index, id: Some(id), bbox: det.bbox, conf: det.confidence, world: Some(world.t.into()) });
        }
        frames.push(out);
    }
    let locations = state.finalize(config.min_instances)?;
    Ok(SceneTracking { state, frames, hypotheses, locations })
}

/// JSON geolocation report of a tracked scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoReport {
    pub scene_id: String,
    pub objects: Vec<GeoReportEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoReportEntry {
    pub track_id: u64,
    pub t: [f64; 3],
    pub r: [f64; 2],
    pub instances: usize,
}

impl GeoReport {
    pub fn new(scene_id: &str, locations: &[GeoLocation]) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            objects: locations
                .iter()
                .map(|l| GeoReportEntry { track_id: l.track_id, t: l.pose.t.into(), r: l.pose.r.into(), instances: l.instances })
                .collect(),
        }
    }

    /// World-frame locations described by the report.
    pub fn locations(&self) -> Result<Vec<GeoLocation>, GeometryError> {
        self.objects
            .iter()
            .map(|o| {
                Ok(GeoLocation {
                    track_id: o.track_id,
                    pose: Pose5D::new(o.t.into(), o.r.into(), FrameId::World)?,
                    instances: o.instances,
                })
            })
            .collect()
    }
}
