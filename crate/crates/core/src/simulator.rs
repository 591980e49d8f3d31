//! Synthetic driving scenes with static, geo-located objects.
//!
//! A level camera drives along a straight or constant-curvature road and
//! observes objects mounted beside it. Every random draw derives from the
//! config seed, so equal configs give byte-identical scenes.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, world_to_camera, CameraIntrinsics, EgoPose, FrameId, GeometryError, PixelObservation, Pose5D};
use crate::matching::{frame_descriptors, MatchingError, MatchingSample, PoseTarget, SampleObject};
use crate::numerics::{attention_pool, PoolingMode, Tensor};
use crate::scene::{sample_training_pairs, BBox, Detection, FrameRecord, GtObject, SceneError, SceneSequence};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
}

fn config_error(field: &str, message: impl Into<String>) -> SimError {
    SimError::Config { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    #[default]
    Straight,
    Turn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    /// m/s.
    pub speed: f64,
    /// deg/s, positive to the left; used by `turn`.
    pub yaw_rate: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self { kind: TrajectoryKind::Straight, speed: 8.0, yaw_rate: 3.0 }
    }
}

impl Trajectory {
    fn curvature(&self) -> f64 {
        match self.kind {
            TrajectoryKind::Straight => 0.0,
            TrajectoryKind::Turn => self.yaw_rate.to_radians() / self.speed,
        }
    }

    /// Ground-plane position and heading after `s` metres of road.
    pub fn at_arc_length(&self, s: f64) -> (Vector2<f64>, f64) {
        let k = self.curvature();
        if k.abs() < 1e-12 {
            (Vector2::new(s, 0.0), 0.0)
        } else {
            let psi = k * s;
            (Vector2::new(psi.sin() / k, (1.0 - psi.cos()) / k), psi)
        }
    }
}

/// Object placement relative to the road, in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Placement {
    /// Signed offset from the road centre line, positive to the left.
    pub lateral: [f64; 2],
    /// Mounting height above the ground.
    pub height: [f64; 2],
    /// Distance along the road from the starting position.
    pub depth: [f64; 2],
    /// Std of the facing direction around "towards oncoming traffic", degrees.
    pub yaw_jitter: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self { lateral: [-8.0, 8.0], height: [3.0, 6.0], depth: [20.0, 90.0], yaw_jitter: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Mounting height above the ground, metres.
    pub mount_height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { width: 1600, height: 900, focal: 1000.0, mount_height: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Pixel std of the observed object centre.
    pub center: f64,
    /// Relative std of the observed depth.
    pub depth: f64,
    /// Std of the observed facing direction, degrees.
    pub rotation: f64,
    /// Per-component std added to appearance vectors and attention logits.
    pub appearance: f64,
    /// Pixel std of box centre and size jitter.
    pub bbox: f64,
}

/// Forced misses for one object over an inclusive range of frame positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occlusion {
    pub object_id: u32,
    pub frames: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Probability that a visible object is not detected in a frame.
    pub miss_rate: f64,
    /// Probability that a frame contains one spurious detection.
    pub false_positive_rate: f64,
    pub occlusions: Vec<Occlusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Defaults to `sim-<seed>` when empty.
    pub scene_id: String,
    pub n_frames: usize,
    /// Hz.
    pub frame_rate: f64,
    pub trajectory: Trajectory,
    pub n_objects: usize,
    pub placement: Placement,
    pub visibility_max_range: f64,
    pub camera: CameraConfig,
    pub noise: NoiseConfig,
    pub detector: DetectorConfig,
    pub appearance_dim: usize,
    pub embedding_dim: usize,
    /// Physical object size (width, height), metres.
    pub object_size: [f64; 2],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_id: String::new(),
            n_frames: 40,
            frame_rate: 2.0,
            trajectory: Trajectory::default(),
            n_objects: 4,
            placement: Placement::default(),
            visibility_max_range: 100.0,
            camera: CameraConfig::default(),
            noise: NoiseConfig::default(),
            detector: DetectorConfig::default(),
            appearance_dim: 64,
            embedding_dim: 8,
            object_size: [0.35, 1.0],
        }
    }
}

/// Side of the synthetic crop feature map that is attention-pooled into `G`.
const FEATURE_MAP_SIDE: usize = 2;
/// Leading embedding channels that carry box-geometry cues.
const CUE_CHANNELS: usize = 3;

impl SimConfig {
    /// Parses and validates a JSON configuration; missing fields take defaults.
    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| config_error(&e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let non_negative = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(config_error(field, format!("must be a finite value >= 0, got {v}")))
            }
        };
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_error(field, format!("must be positive, got {v}")))
            }
        };
        let rate = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_error(field, format!("must lie in [0, 1], got {v}")))
            }
        };
        let range = |field: &str, r: [f64; 2]| {
            if r.iter().all(|v| v.is_finite()) && r[0] <= r[1] {
                Ok(())
            } else {
                Err(config_error(field, format!("must be an ordered finite range, got {r:?}")))
            }
        };
        if self.n_frames < 2 {
            return Err(config_error("n_frames", "must be at least 2"));
        }
        positive("frame_rate", self.frame_rate)?;
        positive("trajectory.speed", self.trajectory.speed)?;
        if !self.trajectory.yaw_rate.is_finite() {
            return Err(config_error("trajectory.yaw_rate", "must be finite"));
        }
        range("placement.lateral", self.placement.lateral)?;
        range("placement.height", self.placement.height)?;
        range("placement.depth", self.placement.depth)?;
        non_negative("placement.yaw_jitter", self.placement.yaw_jitter)?;
        positive("visibility_max_range", self.visibility_max_range)?;
        positive("camera.focal", self.camera.focal)?;
        if self.camera.width == 0 || self.camera.height == 0 {
            return Err(config_error("camera", "image size must be positive"));
        }
        if !self.camera.mount_height.is_finite() {
            return Err(config_error("camera.mount_height", "must be finite"));
        }
        non_negative("noise.center", self.noise.center)?;
        non_negative("noise.depth", self.noise.depth)?;
        non_negative("noise.rotation", self.noise.rotation)?;
        non_negative("noise.appearance", self.noise.appearance)?;
        non_negative("noise.bbox", self.noise.bbox)?;
        rate("detector.miss_rate", self.detector.miss_rate)?;
        rate("detector.false_positive_rate", self.detector.false_positive_rate)?;
        for o in &self.detector.occlusions {
            if o.frames[0] > o.frames[1] {
                return Err(config_error("detector.occlusions", format!("empty frame range {:?}", o.frames)));
            }
        }
        positive("object_size[0]", self.object_size[0])?;
        positive("object_size[1]", self.object_size[1])?;
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let c = &self.camera;
        CameraIntrinsics {
            fx: c.focal,
            fy: c.focal,
            px: c.width as f64 / 2.0,
            py: c.height as f64 / 2.0,
            width: c.width,
            height: c.height,
        }
    }

    /// Camera pose at frame position `k`.
    pub fn ego_at(&self, k: usize) -> EgoPose {
        let s = self.trajectory.speed * k as f64 / self.frame_rate;
        let (p, heading) = self.trajectory.at_arc_length(s);
        EgoPose::level_camera(Vector3::new(p.x, p.y, self.camera.mount_height), heading)
    }

    fn scene_name(&self) -> String {
        if self.scene_id.is_empty() {
            format!("sim-{}", self.seed)
        } else {
            self.scene_id.clone()
        }
    }
}

/// Independent random stream for a purpose tag and index.
fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag.wrapping_mul(0x1_0000_0000).wrapping_add(index));
    rng
}

const STREAM_OBJECTS: u64 = 1;
const STREAM_FRAMES: u64 = 2;
const STREAM_APPEARANCE_BASE: u64 = 3;
const STREAM_APPEARANCE_FRAME: u64 = 4;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn rotate(v: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// World poses of the scene objects, ids `0..n_objects`.
pub fn place_objects(config: &SimConfig) -> Result<Vec<Pose5D>, SimError> {
    let mut rng = stream(config.seed, STREAM_OBJECTS, 0);
    let p = &config.placement;
    (0..config.n_objects)
        .map(|_| {
            let s = uniform(&mut rng, p.depth);
            let lateral = uniform(&mut rng, p.lateral);
            let height = uniform(&mut rng, p.height);
            let jitter = gauss(&mut rng) * p.yaw_jitter.to_radians();
            let (c, psi) = config.trajectory.at_arc_length(s);
            let left = Vector2::new(-psi.sin(), psi.cos());
            let xy = c + left * lateral;
            let facing = rotate(Vector2::new(-psi.cos(), -psi.sin()), jitter);
            Ok(Pose5D::new(Vector3::new(xy.x, xy.y, height), facing, FrameId::World)?)
        })
        .collect()
}

/// Image box of an object of physical size `size` centred at `center`, depth `z`.
fn object_box(center: Vector2<f64>, z: f64, k: &CameraIntrinsics, size: [f64; 2]) -> BBox {
    let w = k.fx * size[0] / z;
    let h = k.fy * size[1] / z;
    BBox::new(center.x - w / 2.0, center.y - h / 2.0, w, h)
}

fn clamp_into(c: Vector2<f64>, k: &CameraIntrinsics) -> Vector2<f64> {
    Vector2::new(c.x.clamp(0.0, k.width as f64), c.y.clamp(0.0, k.height as f64))
}

/// Ground-truth camera observation of a world pose, if the object is visible.
pub fn observe(pose_w: &Pose5D, ego: &EgoPose, k: &CameraIntrinsics, max_range: f64) -> Option<PixelObservation> {
    let cam = world_to_camera(pose_w, ego, FrameId::Camera(0)).ok()?;
    if !(cam.t.z > 0.0) || cam.t.norm() > max_range {
        return None;
    }
    let center = project(&cam.t, k).ok()?;
    k.contains(&center).then_some(PixelObservation { center, depth: cam.t.z, rotation: cam.r })
}

/// Generates a scene with ground truth, noisy detections and oracle features.
pub fn generate_scene(config: &SimConfig) -> Result<SceneSequence, SimError> {
    config.validate()?;
    let objects = place_objects(config)?;
    let k = config.intrinsics();
    let noise = &config.noise;
    let mut frames = Vec::with_capacity(config.n_frames);
    for f in 0..config.n_frames {
        let mut rng = stream(config.seed, STREAM_FRAMES, f as u64);
        let ego = config.ego_at(f);
        let mut gts = Vec::new();
        let mut detections = Vec::new();
        for (id, pose) in objects.iter().enumerate() {
            let id = id as u32;
            // Fixed number of draws per object keeps streams aligned across configs.
            let draws: [f64; 8] = std::array::from_fn(|_| gauss(&mut rng));
            let missed = rng.gen_bool(config.detector.miss_rate);
            let Some(obs) = observe(pose, &ego, &k, config.visibility_max_range) else {
                continue;
            };
            let true_box = object_box(obs.center, obs.depth, &k, config.object_size);
            let clipped = true_box.clip(k.width as f64, k.height as f64);
            gts.push(GtObject { object_id: id, pose: *pose, kind: "traffic_light".into(), bbox: clipped });
            let occluded = config.detector.occlusions.iter().any(|o| o.object_id == id && (o.frames[0]..=o.frames[1]).contains(&f));
            if missed || occluded {
                continue;
            }
            let center = clamp_into(obs.center + Vector2::new(draws[0], draws[1]) * noise.center, &k);
            let depth = obs.depth * (1.0 + noise.depth * draws[2]).max(0.1);
            let rotation = rotate(obs.rotation, noise.rotation.to_radians() * draws[3]);
            let mut bbox = true_box;
            if noise.bbox > 0.0 {
                let c = true_box.center() + Vector2::new(draws[4], draws[5]) * noise.bbox;
                let w = (true_box.width + noise.bbox * draws[6]).max(1.0);
                let h = (true_box.height + noise.bbox * draws[7]).max(1.0);
                bbox = BBox::new(c.x - w / 2.0, c.y - h / 2.0, w, h);
            }
            let Some(bbox) = bbox.clip(k.width as f64, k.height as f64) else {
                continue;
            };
            detections.push(Detection {
                object_id: Some(id),
                observation: Some(PixelObservation { center, depth, rotation }),
                ..Detection::new(bbox, 0.9)
            });
        }
        if rng.gen_bool(config.detector.false_positive_rate) {
            let center = Vector2::new(rng.gen_range(0.0..k.width as f64), rng.gen_range(0.0..k.height as f64));
            let depth = rng.gen_range(5.0..80.0);
            let rotation = rotate(Vector2::new(0.0, -1.0), rng.gen_range(-1.0..1.0));
            let conf = rng.gen_range(0.3..0.8);
            if let Some(bbox) = object_box(center, depth, &k, config.object_size).clip(k.width as f64, k.height as f64) {
                detections.push(Detection {
                    observation: Some(PixelObservation { center, depth, rotation }),
                    ..Detection::new(bbox, conf)
                });
            }
        }
        // Detector output order carries no identity information.
        for i in (1..detections.len()).rev() {
            detections.swap(i, rng.gen_range(0..=i));
        }
        frames.push(FrameRecord {
            frame_index: f as u32,
            timestamp: f as f64 / config.frame_rate,
            intrinsics: k,
            ego,
            detections,
            gt_objects: Some(gts),
        });
    }
    let mut scene = SceneSequence::new(config.scene_name(), frames)?;
    let features = oracle_descriptors(&scene, config)?;
    for (frame, feats) in scene.frames.iter_mut().zip(features) {
        for (det, (appearance, embedding)) in frame.detections.iter_mut().zip(feats) {
            det.appearance = Some(appearance);
            det.embedding = Some(embedding);
        }
    }
    Ok(scene)
}

/// Fixed per-object appearance vector and crop feature map.
struct ObjectLook {
    appearance: Vec<f64>,
    map: Vec<f64>,
    logits: Vec<f64>,
}

fn look(rng: &mut ChaCha8Rng, config: &SimConfig) -> ObjectLook {
    let cells = FEATURE_MAP_SIDE * FEATURE_MAP_SIDE;
    ObjectLook {
        appearance: (0..config.appearance_dim).map(|_| gauss(rng)).collect(),
        map: (0..cells * config.embedding_dim).map(|_| gauss(rng)).collect(),
        logits: (0..cells).map(|_| gauss(rng)).collect(),
    }
}

/// Appearance vector and pooled embedding `G` for every detection.
///
/// Each object id owns a fixed standard-normal appearance vector and crop
/// feature map; detections add Gaussian noise of the configured std. The
/// first embedding channels of the map carry box cues (normalized centre and
/// height), so `G` also encodes where and how large the object appears.
/// False positives draw fresh vectors.
pub fn oracle_descriptors(scene: &SceneSequence, config: &SimConfig) -> Result<Vec<Vec<(Vec<f64>, Vec<f64>)>>, SimError> {
    let sigma = config.noise.appearance;
    let e = config.embedding_dim;
    let side = FEATURE_MAP_SIDE;
    let mut out = Vec::with_capacity(scene.frames.len());
    for (pos, frame) in scene.frames.iter().enumerate() {
        let mut rng = stream(config.seed, STREAM_APPEARANCE_FRAME, pos as u64);
        let (w, h) = (frame.intrinsics.width as f64, frame.intrinsics.height as f64);
        let mut feats = Vec::with_capacity(frame.detections.len());
        for det in &frame.detections {
            let base = match det.object_id {
                Some(id) => look(&mut stream(config.seed, STREAM_APPEARANCE_BASE, id as u64), config),
                None => look(&mut rng, config),
            };
            let appearance: Vec<f64> = base.appearance.iter().map(|v| v + sigma * gauss(&mut rng)).collect();
            let c = det.bbox.center();
            let cues = [c.x / w, c.y / h, det.bbox.height / h * 10.0];
            let mut map = base.map.clone();
            for cell in 0..side * side {
                for (ch, cue) in cues.iter().enumerate().take(CUE_CHANNELS.min(e)) {
                    map[cell * e + ch] = *cue * (side * side) as f64;
                }
                for ch in CUE_CHANNELS.min(e)..e {
                    map[cell * e + ch] += sigma * gauss(&mut rng);
                }
            }
            let logits: Vec<f64> = base.logits.iter().map(|v| v + sigma * gauss(&mut rng)).collect();
            let embedding = attention_pool(
                &Tensor::new(vec![side, side, e], map).expect("feature map shape"),
                &Tensor::new(vec![side, side], logits).expect("logit map shape"),
                PoolingMode::Mean,
            )
            .expect("pooling shapes agree");
            feats.push((appearance, embedding));
        }
        out.push(feats);
    }
    Ok(out)
}

/// Clean pose-head target of a detection bound to a ground-truth object.
fn pose_target(det: &Detection, frame: &FrameRecord, depth_scale: f64) -> Option<[f64; 5]> {
    let id = det.object_id?;
    let gt = frame.gt_objects.iter().flatten().find(|g| g.object_id == id)?;
    let obs = observe(&gt.pose, &frame.ego, &frame.intrinsics, f64::INFINITY)?;
    Some(PoseTarget::encode(&obs, &frame.intrinsics, depth_scale))
}

/// Frame pairs from each scene with descriptors, pose targets and match matrices.
pub fn make_matching_dataset(
    scenes: &[SceneSequence],
    n_max: usize,
    pairs_per_scene: usize,
    capacity: usize,
    depth_scale: f64,
    seed: u64,
) -> Result<Vec<MatchingSample>, SimError> {
    let mut out = Vec::with_capacity(scenes.len() * pairs_per_scene);
    for (idx, scene) in scenes.iter().enumerate() {
        let pair_seed = seed.wrapping_add((idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let pairs = sample_training_pairs(scene, n_max, pairs_per_scene, capacity, pair_seed)?;
        let objects = |pos: usize| -> Result<Vec<SampleObject>, SimError> {
            let frame = &scene.frames[pos];
            let descs = frame_descriptors(frame, &scene.reference_ego)?;
            Ok(frame
                .detections
                .iter()
                .zip(descs)
                .map(|(d, descriptor)| SampleObject { descriptor, pose_target: pose_target(d, frame, depth_scale) })
                .collect())
        };
        for p in pairs {
            out.push(MatchingSample { frame_a: objects(p.frame_a)?, frame_b: objects(p.frame_b)?, matrix: p.matrix });
        }
    }
    Ok(out)
}
