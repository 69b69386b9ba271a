//! Pinhole camera model, the continuous 6D rotation representation, and the
//! two projective maps between image observations and the world frame.
//!
//! Poses are stored camera-to-world: a camera-frame point `p` maps to
//! `R * p + t` in the world, so `t` is also the camera center. Camera axes
//! follow the usual computer-vision layout (x right, y down, z forward).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Norm below which a Gram-Schmidt input column is considered degenerate.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Orthonormality tolerance accepted by [`Rot6D::from_matrix`].
pub const ROTATION_CHECK_TOL: f64 = 1e-9;

/// Shared pinhole intrinsics without skew or distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        if !(self.cx > 0.0 && self.cx < w && self.cy > 0.0 && self.cy < h) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        f64::from(self.width).hypot(f64::from(self.height))
    }

    /// `K⁻¹ (u, v, 1)ᵀ`: the camera-frame ray with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Horizontal field of view in radians.
    pub fn angle_x(&self) -> f64 {
        2.0 * (f64::from(self.width) / (2.0 * self.fx)).atan()
    }
}

/// Unnormalized first two columns of a rotation matrix, `[a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn a1(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn a2(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    /// Gram-Schmidt recovery of the full rotation `[b1 b2 b3]`.
    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        self.gram_schmidt().map(|gs| gs.matrix())
    }

    /// Drops the third column of a proper rotation.
    pub fn from_matrix(r: &Matrix3<f64>) -> Result<Self> {
        let err = orthonormality_error(r);
        let det = r.determinant();
        if !(err <= ROTATION_CHECK_TOL) || !((det - 1.0).abs() <= ROTATION_CHECK_TOL) {
            return Err(Error::NotARotation(err.max((det - 1.0).abs())));
        }
        Ok(Rot6D([
            r[(0, 0)],
            r[(1, 0)],
            r[(2, 0)],
            r[(0, 1)],
            r[(1, 1)],
            r[(2, 1)],
        ]))
    }

    /// Re-expresses the rotation with orthonormal columns.
    pub fn normalized(&self) -> Result<Self> {
        let gs = self.gram_schmidt()?;
        Ok(Rot6D([gs.b1.x, gs.b1.y, gs.b1.z, gs.b2.x, gs.b2.y, gs.b2.z]))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn gram_schmidt(&self) -> Result<GramSchmidt> {
        let a1 = self.a1();
        let a2 = self.a2();
        let n1 = a1.norm();
        if !(n1 > DEGENERATE_TOL) || !n1.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        let b1 = a1 / n1;
        let proj = b1.dot(&a2);
        let u2 = a2 - b1 * proj;
        let n2 = u2.norm();
        let a2_norm = a2.norm();
        if !(a2_norm > DEGENERATE_TOL) || !(n2 > DEGENERATE_TOL * a2_norm) || !n2.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        let b2 = u2 / n2;
        Ok(GramSchmidt {
            a2,
            b1,
            b2,
            b3: b1.cross(&b2),
            n1,
            n2,
            proj,
        })
    }

    /// Pulls a gradient with respect to the recovered matrix back onto the
    /// six raw parameters (vector-Jacobian product through Gram-Schmidt).
    pub fn pullback(&self, grad: &Matrix3<f64>) -> Result<[f64; 6]> {
        let gs = self.gram_schmidt()?;
        let g1: Vector3<f64> = grad.column(0).into();
        let g2: Vector3<f64> = grad.column(1).into();
        let g3: Vector3<f64> = grad.column(2).into();

        // b3 = b1 x b2
        let mut gb1 = g1 + gs.b2.cross(&g3);
        let gb2 = g2 + g3.cross(&gs.b1);

        // b2 = u2 / |u2|
        let gu2 = (gb2 - gs.b2 * gs.b2.dot(&gb2)) / gs.n2;

        // u2 = a2 - (b1 . a2) b1
        let ga2 = gu2 - gs.b1 * gs.b1.dot(&gu2);
        gb1 -= gu2 * gs.proj + gs.a2 * gs.b1.dot(&gu2);

        // b1 = a1 / |a1|
        let ga1 = (gb1 - gs.b1 * gs.b1.dot(&gb1)) / gs.n1;

        Ok([ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z])
    }
}

struct GramSchmidt {
    a2: Vector3<f64>,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
    n1: f64,
    n2: f64,
    proj: f64,
}

impl GramSchmidt {
    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.b1, self.b2, self.b3])
    }
}

/// Frobenius norm of `RᵀR - I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Camera-to-world extrinsics. The recovered rotation matrix is cached so
/// a constructed pose is always usable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rot6d: Rot6D,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rot6d: Rot6D, translation: Vector3<f64>) -> Result<Self> {
        let rotation = rot6d.to_matrix()?;
        Ok(Self {
            rot6d,
            rotation,
            translation,
        })
    }

    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::new(Rot6D::from_matrix(rotation)?, translation)
    }

    pub fn identity() -> Self {
        Self {
            rot6d: Rot6D::IDENTITY,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rot6d(&self) -> &Rot6D {
        &self.rot6d
    }

    /// Recovered camera-to-world rotation.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates (equal to the translation).
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self { translation, ..*self }
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointObservation {
    pub u: f64,
    pub v: f64,
    /// Visibility weight in `[0, 1]`.
    pub m: f64,
    /// Depth along the optical axis of the observing camera.
    pub z: f64,
}

impl KeypointObservation {
    pub fn new(u: f64, v: f64, m: f64, z: f64) -> Self {
        Self { u, v, m, z }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.m) {
            return Err(format!("visibility {} outside [0, 1]", self.m));
        }
        if !self.u.is_finite() || !self.v.is_finite() {
            return Err("non-finite pixel coordinates".into());
        }
        if self.m > 0.0 && !(self.z > 0.0 && self.z.is_finite()) {
            return Err(format!("visible observation has non-positive depth {}", self.z));
        }
        Ok(())
    }
}

/// N views of J named keypoints seen through one shared camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<CameraPose>,
    /// `observations[i][j]`: keypoint `j` in view `i`; `None` means unseen.
    pub observations: Vec<Vec<Option<KeypointObservation>>>,
    pub keypoint_names: Vec<String>,
}

impl Scene {
    pub fn new(
        intrinsics: CameraIntrinsics,
        poses: Vec<CameraPose>,
        observations: Vec<Vec<Option<KeypointObservation>>>,
        keypoint_names: Vec<String>,
    ) -> Result<Self> {
        let scene = Self {
            intrinsics,
            poses,
            observations,
            keypoint_names,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.poses.len();
        let j = self.keypoint_names.len();
        if n < 2 {
            return Err(Error::InvalidScene(format!("need at least 2 views, got {n}")));
        }
        if j < 1 {
            return Err(Error::InvalidScene("need at least 1 keypoint".into()));
        }
        if self.observations.len() != n {
            return Err(Error::InvalidScene(format!(
                "{} observation rows for {n} views",
                self.observations.len()
            )));
        }
        for (i, row) in self.observations.iter().enumerate() {
            if row.len() != j {
                return Err(Error::InvalidScene(format!(
                    "view {i} has {} observation slots for {j} keypoints",
                    row.len()
                )));
            }
            for (k, obs) in row.iter().enumerate() {
                if let Some(obs) = obs {
                    obs.validate()
                        .map_err(|msg| Error::InvalidScene(format!("view {i}, keypoint {k}: {msg}")))?;
                }
            }
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.poses.len()
    }

    pub fn n_keypoints(&self) -> usize {
        self.keypoint_names.len()
    }

    /// The observation of keypoint `j` in view `i`, if it carries weight.
    pub fn visible(&self, i: usize, j: usize) -> Option<&KeypointObservation> {
        self.observations[i][j].as_ref().filter(|o| o.m > 0.0)
    }

    /// Mean translation norm of the poses, the scene scale ω.
    pub fn mean_translation_norm(&self) -> f64 {
        self.poses.iter().map(|p| p.translation().norm()).sum::<f64>() / self.poses.len() as f64
    }
}

/// Lifts pixel `(u, v)` at depth `z` into the world: `R (K⁻¹ (u, v, 1)ᵀ z) + t`.
pub fn back_project(intr: &CameraIntrinsics, pose: &CameraPose, u: f64, v: f64, z: f64) -> Vector3<f64> {
    pose.to_world(&(intr.ray(u, v) * z))
}

/// Image coordinates and camera-frame depth of a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// False when the point is on or behind the image plane; `u` and `v`
    /// are meaningless in that case.
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

/// Projects a world point through the inverse extrinsics and `K`.
pub fn world_to_image(intr: &CameraIntrinsics, pose: &CameraPose, p: &Vector3<f64>) -> Projection {
    let q = pose.to_camera(p);
    Projection {
        u: intr.fx * q.x / q.z + intr.cx,
        v: intr.fy * q.y / q.z + intr.cy,
        depth: q.z,
    }
}

/// Rotation of `angle` radians about a unit `axis` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}

/// Geodesic angle between two rotations, in radians.
///
/// Equal to `arccos((tr(aᵀb) − 1) / 2)`, but the sine is taken from the
/// skew part so that tiny angles are not lost to cancellation.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let cos = (m.trace() - 1.0) / 2.0;
    let sin = (m - m.transpose()).norm() / (2.0 * std::f64::consts::SQRT_2);
    sin.atan2(cos)
}
