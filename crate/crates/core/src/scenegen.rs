//! Synthetic scenes with exact ground truth: keypoints on an ellipsoid
//! viewed by cameras on a horizontal circle around it.
//!
//! World frame is z-up. Cameras sit at `(r cos θ_k, r sin θ_k, h)` with
//! `θ_k = 2πk/N`, counterclockwise seen from above.

use nalgebra::{Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{world_to_image, CameraIntrinsics, CameraPose, KeypointObservation, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VisibilityPolicy {
    /// Seen iff the outward surface normal faces the camera.
    #[default]
    FrontFacingNormal,
    /// Each observation independently dropped with probability `dropout_p`.
    RandomDropout,
    /// Front-facing, then dropout on top.
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGenConfig {
    pub n_views: usize,
    pub n_keypoints: usize,
    pub radius: f64,
    pub camera_height: f64,
    /// Ellipsoid half-sizes along x, y, z.
    pub object_extent: Vector3<f64>,
    pub visibility: VisibilityPolicy,
    pub dropout_p: f64,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            n_views: 80,
            n_keypoints: 66,
            radius: 4.0,
            camera_height: 1.5,
            object_extent: Vector3::new(2.0, 0.9, 0.75),
            visibility: VisibilityPolicy::FrontFacingNormal,
            dropout_p: 0.0,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 400.0,
                cy: 300.0,
                width: 800,
                height: 600,
            },
            seed: 0,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::InvalidConfig("n_views must be ≥ 2".into()));
        }
        if self.n_keypoints < 1 {
            return Err(Error::InvalidConfig("n_keypoints must be ≥ 1".into()));
        }
        if !self.object_extent.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::InvalidConfig("object extent must be positive".into()));
        }
        if !(self.radius > self.object_extent.max()) || !self.radius.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "radius {} must exceed the largest object extent {}",
                self.radius,
                self.object_extent.max()
            )));
        }
        if !self.camera_height.is_finite() {
            return Err(Error::InvalidConfig("camera height must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout probability {} outside [0, 1]",
                self.dropout_p
            )));
        }
        self.intrinsics
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    /// Poses are the ground truth; depths are exact.
    pub scene: Scene,
    pub gt_poses: Vec<CameraPose>,
    pub gt_points: Vec<Vector3<f64>>,
    /// Outward unit normals of the ellipsoid at each keypoint.
    pub gt_normals: Vec<Vector3<f64>>,
}

/// Camera-to-world pose at `center` looking at `target` with zero roll
/// about the world z axis.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Result<CameraPose> {
    let forward = (target - center).normalize();
    let right = forward.cross(&Vector3::z());
    if !(right.norm() > 1e-12) {
        return Err(Error::InvalidConfig("camera looks straight up or down".into()));
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    CameraPose::from_matrix(&Matrix3::from_columns(&[right, down, forward]), *center)
}

fn ring_center(k: usize, n: usize, radius: f64, height: f64, phase: f64) -> Vector3<f64> {
    let theta = std::f64::consts::TAU * k as f64 / n as f64 + phase;
    Vector3::new(radius * theta.cos(), radius * theta.sin(), height)
}

/// Evenly spaced cameras on a circle, looking horizontally at its axis.
pub fn circular_prior(n_views: usize, radius: f64, height: f64) -> Result<Vec<CameraPose>> {
    circular_prior_with_phase(n_views, radius, height, 0.0)
}

/// [`circular_prior`] with the first camera at angle `phase` (radians).
pub fn circular_prior_with_phase(n_views: usize, radius: f64, height: f64, phase: f64) -> Result<Vec<CameraPose>> {
    if n_views < 2 {
        return Err(Error::InvalidConfig("n_views must be ≥ 2".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig("radius must be positive".into()));
    }
    (0..n_views)
        .map(|k| {
            let c = ring_center(k, n_views, radius, height, phase);
            look_at(&c, &Vector3::new(0.0, 0.0, height))
        })
        .collect()
}

/// True when the surface at `point` with outward `normal` faces `camera`.
pub fn front_facing(point: &Vector3<f64>, normal: &Vector3<f64>, camera: &Vector3<f64>) -> bool {
    normal.dot(&(camera - point)) > 0.0
}

pub fn keypoint_names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("kp_{j:02}")).collect()
}

pub fn generate_scene(cfg: &SceneGenConfig) -> Result<GroundTruthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extent = cfg.object_extent;

    let mut gt_points = Vec::with_capacity(cfg.n_keypoints);
    let mut gt_normals = Vec::with_capacity(cfg.n_keypoints);
    for _ in 0..cfg.n_keypoints {
        let dir = loop {
            let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            if v.norm() > 1e-9 {
                break v.normalize();
            }
        };
        gt_points.push(dir.component_mul(&extent));
        gt_normals.push(dir.component_div(&extent).normalize());
    }

    let gt_poses = (0..cfg.n_views)
        .map(|k| {
            look_at(
                &ring_center(k, cfg.n_views, cfg.radius, cfg.camera_height, 0.0),
                &Vector3::zeros(),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let intr = cfg.intrinsics;
    let (w, h) = (f64::from(intr.width), f64::from(intr.height));
    let use_normals = matches!(
        cfg.visibility,
        VisibilityPolicy::FrontFacingNormal | VisibilityPolicy::Both
    );
    let use_dropout = matches!(cfg.visibility, VisibilityPolicy::RandomDropout | VisibilityPolicy::Both);

    let observations = gt_poses
        .iter()
        .map(|pose| {
            gt_points
                .iter()
                .zip(&gt_normals)
                .map(|(p, n)| {
                    // Drawn unconditionally so the stream does not depend on
                    // the policy.
                    let dropped = rng.random::<f64>() < cfg.dropout_p;
                    let proj = world_to_image(&intr, pose, p);
                    let in_frame = proj.in_front() && (0.0..w).contains(&proj.u) && (0.0..h).contains(&proj.v);
                    let visible =
                        in_frame && !(use_normals && !front_facing(p, n, &pose.center())) && !(use_dropout && dropped);
                    visible.then(|| KeypointObservation::new(proj.u, proj.v, 1.0, proj.depth))
                })
                .collect()
        })
        .collect();

    let scene = Scene::new(intr, gt_poses.clone(), observations, keypoint_names(cfg.n_keypoints))?;
    Ok(GroundTruthScene {
        scene,
        gt_poses,
        gt_points,
        gt_normals,
    })
}
