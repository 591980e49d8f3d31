//! Geo-located scene sequences: data model, JSON scene files, training-pair
//! construction and MOT-style CSV files.
//!
//! Scene files are single JSON documents:
//!
//! ```json
//! {
//!   "schema": 1,
//!   "scene_id": "sim-0000",
//!   "frames": [{
//!     "frame_index": 1,
//!     "timestamp": 0.0,
//!     "intrinsics": {"fx": 1000, "fy": 1000, "px": 800, "py": 450, "width": 1600, "height": 900},
//!     "ego": {"rotation": [w, x, y, z], "translation": [x, y, z]},
//!     "detections": [{
//!       "bbox": [left, top, width, height], "confidence": 0.9,
//!       "observation": {"center": [cx, cy], "depth": 21.5, "rotation": [rx, ry]},
//!       "object_id": 3, "appearance": [...], "embedding": [...]
//!     }],
//!     "gt_objects": [{"object_id": 3, "pose": {"t": [..], "r": [..], "frame": "world"}, "kind": "vertical", "bbox": [..]}]
//!   }]
//! }
//! ```
//!
//! `ego` may alternatively be given as `{"matrix": [[..4..] x4]}` (camera to
//! world). Optional detection fields may be omitted.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{Matrix4, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, EgoPose, FrameId, GeometryError, PixelObservation, Pose5D};

pub const SCHEMA_VERSION: u32 = 1;
/// Maximum number of objects handled per frame.
pub const DEFAULT_CAPACITY: usize = 30;
/// Quaternions whose norm is off by more than this are rejected.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("{count} detections exceed capacity {capacity}")]
    CapacityExceeded { count: usize, capacity: usize },
    #[error("scene has {0} frames; at least 2 are required")]
    TooShort(usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

impl SceneError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        SceneError::Io { path: path.to_path_buf(), source }
    }
}

/// Axis-aligned pixel box `(left, top, width, height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox { left: v[0], top: v[1], width: v[2], height: v[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.left, b.top, b.width, b.height]
    }
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self { left, top, width, height }
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.right().min(other.right()) - self.left.max(other.left)).max(0.0);
        let h = (self.bottom().min(other.bottom()) - self.top.max(other.top)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Intersection with the `width × height` image, if non-empty.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let l = self.left.max(0.0);
        let t = self.top.max(0.0);
        let r = self.right().min(width);
        let b = self.bottom().min(height);
        (r > l && b > t).then(|| BBox::new(l, t, r - l, b - t))
    }
}

/// Context padding for a detection box: `clamp(round(0.15 * max(w, h)), 5, 25)`
/// pixels per side, clipped to the image.
pub fn padding_pixels(bbox: &BBox) -> f64 {
    (0.15 * bbox.width.max(bbox.height)).round().clamp(5.0, 25.0)
}

pub fn pad_bbox(bbox: &BBox, image_size: (u32, u32)) -> BBox {
    let p = padding_pixels(bbox);
    let grown = BBox::new(bbox.left - p, bbox.top - p, bbox.width + 2.0 * p, bbox.height + 2.0 * p);
    grown.clip(image_size.0 as f64, image_size.1 as f64).unwrap_or(grown)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    /// Center regressed by a pose head, if one was run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vector2<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<PixelObservation>,
    /// Ground-truth identity bound to this detection (absent for false positives).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<Vec<f64>>,
    /// Geometry embedding pooled from the object crop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64) -> Self {
        Self { bbox, confidence, center: None, observation: None, object_id: None, appearance: None, embedding: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub object_id: u32,
    /// World-frame pose.
    pub pose: Pose5D,
    pub kind: String,
    /// Visible image box, when the object is in view.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u32,
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
    pub ego: EgoPose,
    pub detections: Vec<Detection>,
    pub gt_objects: Option<Vec<GtObject>>,
}

impl FrameRecord {
    /// Keeps the `capacity` most confident detections (stable on ties).
    /// Returns how many were dropped.
    pub fn apply_capacity(&mut self, capacity: usize) -> usize {
        let n = self.detections.len();
        if n <= capacity {
            return 0;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.detections[b].confidence.total_cmp(&self.detections[a].confidence));
        let mut keep = order[..capacity].to_vec();
        keep.sort_unstable();
        let dets = std::mem::take(&mut self.detections);
        self.detections = keep.into_iter().map(|i| dets[i].clone()).collect();
        warn!("frame {}: dropped {} detections over capacity {}", self.frame_index, n - capacity, capacity);
        n - capacity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub scene_id: String,
    pub frames: Vec<FrameRecord>,
    pub reference_ego: EgoPose,
}

impl SceneSequence {
    pub fn new(scene_id: impl Into<String>, frames: Vec<FrameRecord>) -> Result<Self, SceneError> {
        let first = frames.first().ok_or_else(|| SceneError::Schema("scene has no frames".into()))?;
        let scene = Self { scene_id: scene_id.into(), reference_ego: first.ego, frames };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let inv = |m: String| SceneError::InvariantViolation(m);
        let first = self.frames.first().ok_or_else(|| SceneError::Schema("scene has no frames".into()))?;
        if first.ego != self.reference_ego {
            return Err(inv("reference ego differs from the first frame".into()));
        }
        for w in self.frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(inv(format!("frame index {} follows {}", w[1].frame_index, w[0].frame_index)));
            }
        }
        for f in &self.frames {
            let at = |m: String| inv(format!("frame {}: {m}", f.frame_index));
            f.intrinsics.validate().map_err(|e| at(e.to_string()))?;
            if !f.timestamp.is_finite() || !f.ego.translation.iter().all(|v| v.is_finite()) {
                return Err(at("non-finite timestamp or ego translation".into()));
            }
            let (w, h) = (f.intrinsics.width as f64, f.intrinsics.height as f64);
            let mut ids = HashMap::new();
            for (i, d) in f.detections.iter().enumerate() {
                let b = &d.bbox;
                let finite = [b.left, b.top, b.width, b.height].iter().all(|v| v.is_finite());
                if !finite || b.width <= 0.0 || b.height <= 0.0 || b.clip(w, h).is_none() {
                    return Err(at(format!("detection {i} has an invalid box {:?}", <[f64; 4]>::from(*b))));
                }
                if !(0.0..=1.0).contains(&d.confidence) {
                    return Err(at(format!("detection {i} confidence {} outside [0, 1]", d.confidence)));
                }
                if let Some(o) = &d.observation {
                    let ok = o.depth > 0.0
                        && o.depth.is_finite()
                        && o.center.iter().all(|v| v.is_finite())
                        && o.rotation.iter().all(|v| v.is_finite())
                        && o.rotation.norm() > 1e-12;
                    if !ok {
                        return Err(at(format!("detection {i} has an invalid observation")));
                    }
                }
                let features = d.appearance.iter().chain(&d.embedding).flatten();
                let center = d.center.iter().flat_map(|c| c.iter());
                if features.chain(center).any(|v| !v.is_finite()) {
                    return Err(at(format!("detection {i} has non-finite features")));
                }
                if let Some(id) = d.object_id {
                    if ids.insert(id, i).is_some() {
                        return Err(at(format!("object id {id} bound to two detections")));
                    }
                }
            }
            for g in f.gt_objects.iter().flatten() {
                if g.pose.frame != FrameId::World {
                    return Err(at(format!("ground truth {} is not in the world frame", g.object_id)));
                }
                let ok = g.pose.t.iter().all(|v| v.is_finite()) && (g.pose.r.norm() - 1.0).abs() <= 1e-9;
                if !ok {
                    return Err(at(format!("ground truth {} has an invalid pose", g.object_id)));
                }
            }
        }
        Ok(())
    }

    /// Every ground-truth object seen anywhere in the scene, by id.
    pub fn gt_objects(&self) -> BTreeMap<u32, GtObject> {
        let mut out = BTreeMap::new();
        for g in self.frames.iter().flat_map(|f| f.gt_objects.iter().flatten()) {
            out.entry(g.object_id).or_insert_with(|| g.clone());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SceneFile::from(self)).expect("scene serializes")
    }

    /// Parses a scene document and applies the default detection capacity.
    pub fn from_json_str(text: &str) -> Result<Self, SceneError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: SceneFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            SceneError::Parse { line: inner.line(), column: inner.column(), field, message: inner.to_string() }
        })?;
        let mut scene = file.into_scene()?;
        for f in &mut scene.frames {
            f.apply_capacity(DEFAULT_CAPACITY);
        }
        Ok(scene)
    }
}

pub fn load_scene(path: &Path) -> Result<SceneSequence, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    SceneSequence::from_json_str(&text)
}

pub fn save_scene(scene: &SceneSequence, path: &Path) -> Result<(), SceneError> {
    write_atomic(path, scene.to_json().as_bytes())
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SceneError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| SceneError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| SceneError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| SceneError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SceneError::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    schema: u32,
    scene_id: String,
    frames: Vec<FrameFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    frame_index: u32,
    timestamp: f64,
    intrinsics: CameraIntrinsics,
    ego: EgoFile,
    #[serde(default)]
    detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_objects: Option<Vec<GtObject>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EgoFile {
    Quaternion { rotation: [f64; 4], translation: [f64; 3] },
    Matrix { matrix: [[f64; 4]; 4] },
}

impl EgoFile {
    fn into_ego(self) -> Result<EgoPose, GeometryError> {
        match self {
            EgoFile::Quaternion { rotation, translation } => {
                EgoPose::from_wxyz(rotation, Vector3::from(translation), QUATERNION_TOLERANCE)
            }
            EgoFile::Matrix { matrix } => {
                let m = Matrix4::from_fn(|r, c| matrix[r][c]);
                let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
                if bottom != [0.0, 0.0, 0.0, 1.0] {
                    return Err(GeometryError::NotOrthonormal(f64::NAN));
                }
                EgoPose::from_matrix(&m)
            }
        }
    }
}

impl From<&SceneSequence> for SceneFile {
    fn from(s: &SceneSequence) -> Self {
        let frames = s
            .frames
            .iter()
            .map(|f| FrameFile {
                frame_index: f.frame_index,
                timestamp: f.timestamp,
                intrinsics: f.intrinsics,
                ego: EgoFile::Quaternion { rotation: f.ego.wxyz(), translation: f.ego.translation.into() },
                detections: f.detections.clone(),
                gt_objects: f.gt_objects.clone(),
            })
            .collect();
        SceneFile { schema: SCHEMA_VERSION, scene_id: s.scene_id.clone(), frames }
    }
}

impl SceneFile {
    fn into_scene(self) -> Result<SceneSequence, SceneError> {
        if self.schema != SCHEMA_VERSION {
            return Err(SceneError::Schema(format!("unsupported schema version {}", self.schema)));
        }
        let frames = self
            .frames
            .into_iter()
            .map(|f| {
                let ego = f
                    .ego
                    .into_ego()
                    .map_err(|e| SceneError::InvariantViolation(format!("frame {}: {e}", f.frame_index)))?;
                Ok(FrameRecord {
                    frame_index: f.frame_index,
                    timestamp: f.timestamp,
                    intrinsics: f.intrinsics,
                    ego,
                    detections: f.detections,
                    gt_objects: f.gt_objects,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        SceneSequence::new(self.scene_id, frames)
    }
}

/// Binary `(N+1)×(N+1)` association matrix; index `N` is the null row/column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchMatrix {
    capacity: usize,
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl MatchMatrix {
    pub fn zeros(capacity: usize, rows: usize, cols: usize) -> Self {
        assert!(rows <= capacity && cols <= capacity);
        let side = capacity + 1;
        Self { capacity, rows, cols, data: vec![0; side * side] }
    }

    /// Capacity `N`; the matrix side is `N + 1`.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of real objects in the first frame (rows).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of real objects in the second frame (columns).
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * (self.capacity + 1) + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        let side = self.capacity + 1;
        self.data[i * side + j] = v;
    }

    /// Checks that real rows and columns each hold exactly one 1 (counting the
    /// null slot) and padded rows/columns are empty.
    pub fn validate(&self) -> Result<(), SceneError> {
        let side = self.capacity + 1;
        if self.data.len() != side * side || self.rows > self.capacity || self.cols > self.capacity {
            return Err(SceneError::InvariantViolation("match matrix shape".into()));
        }
        if self.data.iter().any(|&v| v > 1) {
            return Err(SceneError::InvariantViolation("match matrix is not binary".into()));
        }
        let n = self.capacity;
        for i in 0..n {
            let sum: u32 = (0..side).map(|j| self.get(i, j) as u32).sum();
            let want = u32::from(i < self.rows);
            if sum != want {
                return Err(SceneError::InvariantViolation(format!("row {i} sums to {sum}")));
            }
        }
        for j in 0..n {
            let sum: u32 = (0..side).map(|i| self.get(i, j) as u32).sum();
            let want = u32::from(j < self.cols);
            if sum != want {
                return Err(SceneError::InvariantViolation(format!("column {j} sums to {sum}")));
            }
        }
        if self.get(n, n) != 0 {
            return Err(SceneError::InvariantViolation("null/null entry set".into()));
        }
        Ok(())
    }
}

/// Ground-truth association between the detections of two frames.
/// Detections without an object id never match.
pub fn build_match_matrix(frame_a: &FrameRecord, frame_b: &FrameRecord, capacity: usize) -> Result<MatchMatrix, SceneError> {
    let (na, nb) = (frame_a.detections.len(), frame_b.detections.len());
    if na.max(nb) > capacity {
        return Err(SceneError::CapacityExceeded { count: na.max(nb), capacity });
    }
    let mut m = MatchMatrix::zeros(capacity, na, nb);
    let by_id: HashMap<u32, usize> =
        frame_b.detections.iter().enumerate().filter_map(|(j, d)| d.object_id.map(|id| (id, j))).collect();
    let mut col_matched = vec![false; nb];
    for (i, d) in frame_a.detections.iter().enumerate() {
        match d.object_id.and_then(|id| by_id.get(&id)) {
            Some(&j) => {
                m.set(i, j, 1);
                col_matched[j] = true;
            }
            None => m.set(i, capacity, 1),
        }
    }
    for (j, matched) in col_matched.into_iter().enumerate() {
        if !matched {
            m.set(capacity, j, 1);
        }
    }
    Ok(m)
}

/// Two frames of a scene `separation` frames apart with their association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    /// Position of the earlier frame in `scene.frames`.
    pub frame_a: usize,
    pub frame_b: usize,
    pub separation: usize,
    pub matrix: MatchMatrix,
}

/// Samples `count` frame pairs with separation uniform in
/// `1..=min(n_max, len - 1)`, then a uniform start position.
pub fn sample_training_pairs(
    scene: &SceneSequence,
    n_max: usize,
    count: usize,
    capacity: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>, SceneError> {
    let len = scene.frames.len();
    if len < 2 {
        return Err(SceneError::TooShort(len));
    }
    let max_sep = n_max.max(1).min(len - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let separation = rng.gen_range(1..=max_sep);
            let frame_b = rng.gen_range(separation..len);
            let frame_a = frame_b - separation;
            let matrix = build_match_matrix(&scene.frames[frame_a], &scene.frames[frame_b], capacity)?;
            Ok(TrainingPair { frame_a, frame_b, separation, matrix })
        })
        .collect()
}

/// One line of a MOT-style CSV file:
/// `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotRow {
    pub frame: u32,
    /// `-1` in the file when absent.
    pub id: Option<u64>,
    pub bbox: BBox,
    pub conf: f64,
    /// World coordinates; all three are `-1` in the file when absent.
    pub world: Option<[f64; 3]>,
}

impl MotRow {
    fn sort_key(&self) -> (u32, i128) {
        (self.frame, self.id.map_or(-1, i128::from))
    }
}

/// Serializes rows in frame-major, id-major order. Rows without an id come
/// first within a frame and keep their relative order.
pub fn write_mot(rows: &[MotRow]) -> String {
    let mut sorted: Vec<&MotRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.sort_key());
    let mut out = String::new();
    for r in sorted {
        let id = r.id.map_or_else(|| "-1".to_string(), |v| v.to_string());
        let [x, y, z] = r.world.unwrap_or([-1.0; 3]);
        let b = &r.bbox;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.frame, id, b.left, b.top, b.width, b.height, r.conf, x, y, z
        ));
    }
    out
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T, SceneError> {
    s.trim().parse().map_err(|_| SceneError::Format { line, message: format!("invalid {name} `{}`", s.trim()) })
}

pub fn read_mot(text: &str) -> Result<Vec<MotRow>, SceneError> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 10 {
            return Err(SceneError::Format { line, message: format!("expected 10 fields, found {}", fields.len()) });
        }
        let frame: u32 = parse_field(fields[0], "frame", line)?;
        let id_raw: i64 = parse_field(fields[1], "id", line)?;
        let id = match id_raw {
            -1 => None,
            v if v > 0 => Some(v as u64),
            v => return Err(SceneError::Format { line, message: format!("track id {v} is not positive") }),
        };
        let mut nums = [0.0f64; 8];
        let names = ["bb_left", "bb_top", "bb_width", "bb_height", "conf", "x", "y", "z"];
        for (k, name) in names.iter().enumerate() {
            let v: f64 = parse_field(fields[k + 2], name, line)?;
            if !v.is_finite() {
                return Err(SceneError::Format { line, message: format!("{name} is not finite") });
            }
            nums[k] = v;
        }
        let world = (nums[5..] != [-1.0; 3]).then(|| [nums[5], nums[6], nums[7]]);
        rows.push(MotRow { frame, id, bbox: BBox::new(nums[0], nums[1], nums[2], nums[3]), conf: nums[4], world });
    }
    Ok(rows)
}

pub fn read_mot_file(path: &Path) -> Result<Vec<MotRow>, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    read_mot(&text)
}

/// Groups identified rows by track id, each track ordered by frame.
pub fn group_tracks(rows: &[MotRow]) -> BTreeMap<u64, Vec<MotRow>> {
    let mut tracks: BTreeMap<u64, Vec<MotRow>> = BTreeMap::new();
    for r in rows {
        if let Some(id) = r.id {
            tracks.entry(id).or_default().push(r.clone());
        }
    }
    for t in tracks.values_mut() {
        t.sort_by_key(|r| r.frame);
    }
    tracks
}

/// Detection rows of a scene (no identities).
pub fn detection_rows(scene: &SceneSequence) -> Vec<MotRow> {
    scene
        .frames
        .iter()
        .flat_map(|f| {
            f.detections.iter().map(move |d| MotRow { frame: f.frame_index, id: None, bbox: d.bbox, conf: d.confidence, world: None })
        })
        .collect()
}

/// Annotation rows: every visible ground-truth box with its object id and
/// world position. Object ids are shifted by one so that id 0 stays valid.
pub fn gt_rows(scene: &SceneSequence) -> Vec<MotRow> {
    scene
        .frames
        .iter()
        .flat_map(|f| {
            f.gt_objects.iter().flatten().filter_map(move |g| {
                g.bbox.map(|bbox| MotRow {
                    frame: f.frame_index,
                    id: Some(g.object_id as u64 + 1),
                    bbox,
                    conf: 1.0,
                    world: Some(g.pose.t.into()),
                })
            })
        })
        .collect()
}

/// Writes `det.txt` (scene detections) and `hyp.txt` (tracker output) into `dir`.
pub fn export_mot(scene: &SceneSequence, hypotheses: &[MotRow], dir: &Path) -> Result<(PathBuf, PathBuf), SceneError> {
    if hypotheses.iter().any(|r| r.id.is_none()) {
        return Err(SceneError::Format { line: 0, message: "hypothesis rows need positive track ids".into() });
    }
    let det = dir.join("det.txt");
    let hyp = dir.join("hyp.txt");
    write_atomic(&det, write_mot(&detection_rows(scene)).as_bytes())?;
    write_atomic(&hyp, write_mot(hypotheses).as_bytes())?;
    Ok((det, hyp))
}

/// Reads the files written by [`export_mot`].
pub fn import_mot(det: &Path, hyp: &Path) -> Result<(Vec<MotRow>, BTreeMap<u64, Vec<MotRow>>), SceneError> {
    let dets = read_mot_file(det)?;
    let hyps = read_mot_file(hyp)?;
    Ok((dets, group_tracks(&hyps)))
}
