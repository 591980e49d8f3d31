//! Camera models, rigid frame changes and projective depth recovery.
//!
//! Axis conventions used everywhere in this crate:
//!
//! * camera frames: `x` right, `y` down, `z` forward along the optical axis;
//! * world frame: right-handed with `z` up;
//! * an [`EgoPose`] maps camera coordinates into world coordinates
//!   (`p_world = q * p_cam + t`).
//!
//! Facing directions are 2-vectors. In the world frame they are the `(x, y)`
//! components of a horizontal direction. A frame change applies only the yaw
//! of the ego rotation, where yaw is the heading of the camera `x` axis
//! projected onto the world horizontal plane. For a level camera this makes
//! the camera-frame facing vector `(right, forward)`, i.e. the camera `x` and
//! `z` components of the direction.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("vector norm {0:e} is too small to normalize")]
    ZeroVector(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("pose is in frame {actual}, expected {expected}")]
    FrameMismatch { expected: FrameId, actual: FrameId },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation matrix is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("quaternion norm {0} outside tolerance")]
    QuaternionNorm(f64),
}

/// Coordinate frame a [`Pose5D`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameId {
    /// Camera frame at the given frame index.
    Camera(u32),
    /// Camera frame of the first frame of a scene.
    Reference,
    World,
}

impl std::fmt::Display for FrameId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrameId::Camera(i) => write!(f, "camera({i})"),
            FrameId::Reference => f.write_str("reference"),
            FrameId::World => f.write_str("world"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, px: f64, py: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, px, py, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.px, self.py].iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.px < 0.0 || self.px > self.width as f64 || self.py < 0.0 || self.py > self.height as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.px, self.py, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, c: &Vector2<f64>) -> bool {
        c.x >= 0.0 && c.y >= 0.0 && c.x <= self.width as f64 && c.y <= self.height as f64
    }
}

/// Camera pose in the world: rotation world←camera and camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl EgoPose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`.
    ///
    /// Norms within `tolerance` of one are renormalized; anything further off
    /// is rejected.
    pub fn from_wxyz(q: [f64; 4], translation: Vector3<f64>, tolerance: f64) -> Result<Self, GeometryError> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > tolerance {
            return Err(GeometryError::QuaternionNorm(norm));
        }
        // Keep already-normalized input bit-exact so files round-trip.
        let rotation = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::from_quaternion(quat)
        };
        Ok(Self { rotation, translation })
    }

    /// Builds a pose from a homogeneous 4×4 camera-to-world matrix.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let dev = (r.transpose() * r - Matrix3::identity()).amax();
        if !dev.is_finite() || dev >= 1e-6 || r.determinant() <= 0.0 {
            return Err(GeometryError::NotOrthonormal(dev));
        }
        let rot = Rotation3::from_matrix_unchecked(r);
        Ok(Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation: Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
        })
    }

    /// Level camera at `position` whose optical axis points along world
    /// heading `heading` (radians, counter-clockwise from world `x`).
    pub fn level_camera(position: Vector3<f64>, heading: f64) -> Self {
        let (s, c) = heading.sin_cos();
        let right = Vector3::new(s, -c, 0.0);
        let down = Vector3::new(0.0, 0.0, -1.0);
        let forward = Vector3::new(c, s, 0.0);
        let r = Matrix3::from_columns(&[right, down, forward]);
        let rot = Rotation3::from_matrix_unchecked(r);
        Self { rotation: UnitQuaternion::from_rotation_matrix(&rot), translation: position }
    }

    /// Quaternion components `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Heading of the camera `x` axis in the world horizontal plane.
    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vector3::x();
        if x.x.hypot(x.y) > 1e-12 {
            x.y.atan2(x.x)
        } else {
            // x axis vertical: use the y axis, which sits 90° clockwise of x
            // for the level-camera layout.
            let y = self.rotation * Vector3::y();
            y.y.atan2(y.x) + std::f64::consts::FRAC_PI_2
        }
    }
}

/// Translation plus horizontal facing direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose5D {
    pub t: Vector3<f64>,
    pub r: Vector2<f64>,
    pub frame: FrameId,
}

impl Pose5D {
    /// Creates a pose, normalizing the facing direction.
    pub fn new(t: Vector3<f64>, r: Vector2<f64>, frame: FrameId) -> Result<Self, GeometryError> {
        Ok(Self { t, r: normalize_rotation(r)?, frame })
    }

    fn expect_frame(&self, expected: FrameId) -> Result<(), GeometryError> {
        if self.frame != expected {
            return Err(GeometryError::FrameMismatch { expected, actual: self.frame });
        }
        Ok(())
    }
}

/// Image-space observation of an object: pixel center, depth and facing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelObservation {
    pub center: Vector2<f64>,
    pub depth: f64,
    pub rotation: Vector2<f64>,
}

impl PixelObservation {
    /// Camera-frame pose implied by this observation.
    pub fn to_pose(&self, k: &CameraIntrinsics, frame_index: u32) -> Result<Pose5D, GeometryError> {
        let t = recover_translation(self, k)?;
        Pose5D::new(t, self.rotation, FrameId::Camera(frame_index))
    }
}

pub fn normalize_rotation(r: Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
    let n = r.norm();
    if !(n > 1e-12) {
        return Err(GeometryError::ZeroVector(n));
    }
    Ok(r / n)
}

/// Back-projects a pixel center at known depth: `T_a = (c_a - p_a) * T_z / f_a`.
pub fn recover_translation(obs: &PixelObservation, k: &CameraIntrinsics) -> Result<Vector3<f64>, GeometryError> {
    let z = obs.depth;
    if !(z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(Vector3::new((obs.center.x - k.px) * z / k.fx, (obs.center.y - k.py) * z / k.fy, z))
}

pub fn project(t: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>, GeometryError> {
    if !(t.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(t.z));
    }
    Ok(Vector2::new(k.px + k.fx * t.x / t.z, k.py + k.fy * t.y / t.z))
}

fn rotate2(r: &Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * r.x - s * r.y, s * r.x + c * r.y)
}

/// Maps a world pose into the camera frame `target` of `ego`.
pub fn world_to_camera(pose_w: &Pose5D, ego: &EgoPose, target: FrameId) -> Result<Pose5D, GeometryError> {
    pose_w.expect_frame(FrameId::World)?;
    let t = ego.rotation.inverse_transform_vector(&(pose_w.t - ego.translation));
    let r = normalize_rotation(rotate2(&pose_w.r, -ego.yaw()))?;
    Ok(Pose5D { t, r, frame: target })
}

/// Maps a camera-frame pose into the world frame. Any camera-like frame
/// label ([`FrameId::Camera`] or [`FrameId::Reference`]) is accepted.
pub fn camera_to_world(pose_c: &Pose5D, ego: &EgoPose) -> Result<Pose5D, GeometryError> {
    if pose_c.frame == FrameId::World {
        return Err(GeometryError::FrameMismatch { expected: FrameId::Reference, actual: FrameId::World });
    }
    let t = ego.rotation.transform_vector(&pose_c.t) + ego.translation;
    let r = normalize_rotation(rotate2(&pose_c.r, ego.yaw()))?;
    Ok(Pose5D { t, r, frame: FrameId::World })
}

/// Re-expresses a camera(t) pose in the scene reference camera frame.
pub fn to_reference_frame(pose_t: &Pose5D, ego_t: &EgoPose, ego_ref: &EgoPose) -> Result<Pose5D, GeometryError> {
    let world = camera_to_world(pose_t, ego_t)?;
    world_to_camera(&world, ego_ref, FrameId::Reference)
}

/// Angle between two unit facing vectors, in degrees within `[0, 180]`.
pub fn angular_error(r: &Vector2<f64>, r_hat: &Vector2<f64>) -> f64 {
    r.dot(r_hat).clamp(-1.0, 1.0).acos().to_degrees()
}
