//! Keypoint centroids, the combined 3D + 2D clustering loss and its exact
//! gradient with respect to every rotation, translation and depth.
//!
//! For keypoint `j` seen in views `i` with weights `m_i`:
//!
//! ```text
//! P_i = R_i (z_i K⁻¹ (u_i, v_i, 1)ᵀ) + t_i
//! C   = Σ m_i P_i / Σ m_i
//! L_i = |P_i - C| + λ |(u_i, v_i) - π_i(C)|
//! 𝓛   = (1/J) Σ_j Σ_i m_i L_i
//! ```
//!
//! Gradients flow through the centroid unless `centroid_gradients` is off.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{back_project, CameraPose, Scene};

/// Residual norms at or below this (relative to the coordinate magnitude)
/// are treated as exactly zero, where the norm has no gradient.
pub const KINK_TOL: f64 = 1e-10;

/// Camera-frame depth floor used by [`BehindCameraPolicy::ClampDepth`].
pub const MIN_CLAMP_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BehindCameraPolicy {
    /// Drop the 2D term for a view whose centroid lies behind it.
    #[default]
    SkipTwoD,
    /// Project with the camera-frame depth clamped to [`MIN_CLAMP_DEPTH`].
    ClampDepth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    /// Weight of the pixel-space term.
    pub lambda_2d: f64,
    /// Minimum number of views with `m > 0` for a keypoint to be active.
    pub min_effective_views: usize,
    pub behind_camera_policy: BehindCameraPolicy,
    /// Differentiate through the centroids (true) or hold them fixed.
    pub centroid_gradients: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_2d: 0.0,
            min_effective_views: 2,
            behind_camera_policy: BehindCameraPolicy::SkipTwoD,
            centroid_gradients: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn with_lambda(lambda_2d: f64) -> Self {
        Self {
            lambda_2d,
            ..Self::default()
        }
    }

    /// Config with `λ = ω / diagonal`, see [`default_lambda`].
    pub fn for_scene(scene: &Scene) -> Self {
        Self::with_lambda(default_lambda(scene))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_2d >= 0.0) || !self.lambda_2d.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda_2d
            )));
        }
        if self.min_effective_views < 2 {
            return Err(Error::InvalidConfig("min_effective_views must be at least 2".into()));
        }
        Ok(())
    }
}

/// Scene scale over image diagonal: one diagonal of pixel error weighs as
/// much as one scene-scale unit of 3D error.
pub fn default_lambda(scene: &Scene) -> f64 {
    scene.mean_translation_norm() / scene.intrinsics.diagonal()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    pub centroids: Vec<Option<Vector3<f64>>>,
    /// `M^j = Σ_i m_i^j`.
    pub effective_counts: Vec<f64>,
    pub active_mask: Vec<bool>,
}

impl CentroidSet {
    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|a| **a).count()
    }
}

fn keypoint_active(scene: &Scene, cfg: &ObjectiveConfig, j: usize) -> bool {
    let views = (0..scene.n_views()).filter(|&i| scene.visible(i, j).is_some()).count();
    views >= cfg.min_effective_views
}

pub fn compute_centroids(scene: &Scene, cfg: &ObjectiveConfig) -> CentroidSet {
    let n_kp = scene.n_keypoints();
    let mut set = CentroidSet {
        centroids: vec![None; n_kp],
        effective_counts: vec![0.0; n_kp],
        active_mask: vec![false; n_kp],
    };
    for j in 0..n_kp {
        let mut weight = 0.0;
        let mut sum = Vector3::zeros();
        for i in 0..scene.n_views() {
            if let Some(obs) = scene.visible(i, j) {
                weight += obs.m;
                sum += back_project(&scene.intrinsics, &scene.poses[i], obs.u, obs.v, obs.z) * obs.m;
            }
        }
        set.effective_counts[j] = weight;
        if keypoint_active(scene, cfg, j) {
            set.active_mask[j] = true;
            set.centroids[j] = Some(sum / weight);
        }
    }
    set
}

/// Pixel residual of the centroid re-projected into one view, along with
/// what the gradient pass needs. `None` when the 2D term is skipped.
struct Reprojection {
    /// Camera-frame centroid.
    q: Vector3<f64>,
    depth_clamped: bool,
    residual: Vector2<f64>,
}

fn reproject(
    scene: &Scene,
    pose: &CameraPose,
    policy: BehindCameraPolicy,
    centroid: &Vector3<f64>,
    u: f64,
    v: f64,
) -> Option<Reprojection> {
    let intr = &scene.intrinsics;
    let q = pose.to_camera(centroid);
    let (depth, depth_clamped) = match policy {
        BehindCameraPolicy::SkipTwoD if q.z > 0.0 => (q.z, false),
        BehindCameraPolicy::SkipTwoD => return None,
        BehindCameraPolicy::ClampDepth if q.z >= MIN_CLAMP_DEPTH => (q.z, false),
        BehindCameraPolicy::ClampDepth => (MIN_CLAMP_DEPTH, true),
    };
    let pu = intr.fx * q.x / depth + intr.cx;
    let pv = intr.fy * q.y / depth + intr.cy;
    Some(Reprojection {
        q: Vector3::new(q.x, q.y, depth),
        depth_clamped,
        residual: Vector2::new(u - pu, v - pv),
    })
}

/// Unweighted `L_i^j` for one observation.
pub fn observation_loss(
    scene: &Scene,
    centroids: &CentroidSet,
    cfg: &ObjectiveConfig,
    i: usize,
    j: usize,
) -> Result<f64> {
    let c = centroids.centroids[j].ok_or(Error::InactiveKeypoint(j))?;
    let obs = scene
        .visible(i, j)
        .ok_or_else(|| Error::InvalidScene(format!("keypoint {j} is not visible in view {i}")))?;
    let pose = &scene.poses[i];
    let p = back_project(&scene.intrinsics, pose, obs.u, obs.v, obs.z);
    let mut loss = (p - c).norm();
    if let Some(rp) = reproject(scene, pose, cfg.behind_camera_policy, &c, obs.u, obs.v) {
        loss += cfg.lambda_2d * rp.residual.norm();
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `term_3d + λ term_2d`.
    pub total: f64,
    /// Contribution of each view; sums to `total`.
    pub per_view: Vec<f64>,
    /// Contribution of each keypoint; sums to `total`.
    pub per_keypoint: Vec<f64>,
    /// `(1/J) Σ m |P - C|`.
    pub term_3d: f64,
    /// `(1/J) Σ m |p - π(C)|`, before multiplication by λ.
    pub term_2d: f64,
}

/// Gradient of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub rotation: Vec<[f64; 6]>,
    pub translation: Vec<Vector3<f64>>,
    /// `depth[i][j]`; zero for unseen observations.
    pub depth: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(n_views: usize, n_keypoints: usize) -> Self {
        Self {
            rotation: vec![[0.0; 6]; n_views],
            translation: vec![Vector3::zeros(); n_views],
            depth: vec![vec![0.0; n_keypoints]; n_views],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().flatten().all(|g| g.is_finite())
            && self.translation.iter().all(|g| g.iter().all(|x| x.is_finite()))
            && self.depth.iter().flatten().all(|g| g.is_finite())
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.rotation
            .iter()
            .flatten()
            .chain(self.translation.iter().flat_map(|t| t.iter()))
            .chain(self.depth.iter().flatten())
            .fold(0.0_f64, |acc, g| acc.max(g.abs()))
    }
}

/// Per-view pieces of one keypoint's contribution.
struct ViewTerm {
    view: usize,
    loss_3d: f64,
    loss_2d: f64,
    grad_rot: Matrix3<f64>,
    grad_trans: Vector3<f64>,
    grad_depth: f64,
}

fn keypoint_terms(scene: &Scene, cfg: &ObjectiveConfig, j: usize, with_grad: bool) -> Vec<ViewTerm> {
    if !keypoint_active(scene, cfg, j) {
        return Vec::new();
    }
    let intr = &scene.intrinsics;
    let inv_j = 1.0 / scene.n_keypoints() as f64;

    struct Seen {
        view: usize,
        m: f64,
        u: f64,
        v: f64,
        z: f64,
        ray: Vector3<f64>,
        point: Vector3<f64>,
    }
    let seen: Vec<Seen> = (0..scene.n_views())
        .filter_map(|i| {
            scene.visible(i, j).map(|o| {
                let ray = intr.ray(o.u, o.v);
                Seen {
                    view: i,
                    m: o.m,
                    u: o.u,
                    v: o.v,
                    z: o.z,
                    ray,
                    point: scene.poses[i].to_world(&(ray * o.z)),
                }
            })
        })
        .collect();
    let weight: f64 = seen.iter().map(|s| s.m).sum();
    let centroid = seen.iter().fold(Vector3::zeros(), |acc, s| acc + s.point * s.m) / weight;
    let coord_scale = 1.0 + centroid.norm();

    let mut terms = Vec::with_capacity(seen.len());
    let mut grad_centroid = Vector3::zeros();
    let mut grad_points = Vec::with_capacity(seen.len());

    for s in &seen {
        let pose = &scene.poses[s.view];
        let rot = pose.rotation();
        let mut term = ViewTerm {
            view: s.view,
            loss_3d: 0.0,
            loss_2d: 0.0,
            grad_rot: Matrix3::zeros(),
            grad_trans: Vector3::zeros(),
            grad_depth: 0.0,
        };
        let mut grad_point = Vector3::zeros();

        let offset = s.point - centroid;
        let dist = offset.norm();
        term.loss_3d = s.m * dist * inv_j;
        if with_grad && dist > KINK_TOL * coord_scale {
            let g = offset * (s.m * inv_j / dist);
            grad_point += g;
            grad_centroid -= g;
        }

        if let Some(rp) = reproject(scene, pose, cfg.behind_camera_policy, &centroid, s.u, s.v) {
            let pix = rp.residual.norm();
            term.loss_2d = s.m * pix * inv_j;
            let pix_scale = 1.0 + s.u.abs() + s.v.abs();
            if with_grad && cfg.lambda_2d > 0.0 && pix > KINK_TOL * pix_scale {
                // d/d(projection) of λ m |obs - proj| / J
                let gp = -rp.residual * (cfg.lambda_2d * s.m * inv_j / pix);
                let q = rp.q;
                let gz = if rp.depth_clamped {
                    0.0
                } else {
                    -(intr.fx * q.x * gp.x + intr.fy * q.y * gp.y) / (q.z * q.z)
                };
                let gq = Vector3::new(intr.fx * gp.x / q.z, intr.fy * gp.y / q.z, gz);
                // q = Rᵀ (C - t)
                let g_world = rot * gq;
                grad_centroid += g_world;
                term.grad_trans -= g_world;
                term.grad_rot += (centroid - pose.translation()) * gq.transpose();
            }
        }
        grad_points.push(grad_point);
        terms.push(term);
    }

    if with_grad {
        for ((s, term), mut gp) in seen.iter().zip(terms.iter_mut()).zip(grad_points) {
            if cfg.centroid_gradients {
                gp += grad_centroid * (s.m / weight);
            }
            // P = R (z d) + t
            let rot = scene.poses[s.view].rotation();
            term.grad_trans += gp;
            term.grad_depth = (rot * s.ray).dot(&gp);
            term.grad_rot += gp * (s.ray * s.z).transpose();
        }
    }
    terms
}

fn evaluate(scene: &Scene, cfg: &ObjectiveConfig, with_grad: bool) -> Result<(LossReport, Option<Gradients>)> {
    cfg.validate()?;
    let n = scene.n_views();
    let n_kp = scene.n_keypoints();
    let per_keypoint: Vec<Vec<ViewTerm>> = (0..n_kp)
        .into_par_iter()
        .map(|j| keypoint_terms(scene, cfg, j, with_grad))
        .collect();
    if per_keypoint.iter().all(|t| t.is_empty()) {
        return Err(Error::NoConstraints);
    }

    // Fixed reduction order: keypoints ascending, then views ascending.
    let mut report = LossReport {
        total: 0.0,
        per_view: vec![0.0; n],
        per_keypoint: vec![0.0; n_kp],
        term_3d: 0.0,
        term_2d: 0.0,
    };
    let mut grad_rot = vec![Matrix3::zeros(); n];
    let mut grads = with_grad.then(|| Gradients::zeros(n, n_kp));
    for (j, terms) in per_keypoint.iter().enumerate() {
        for t in terms {
            let contrib = t.loss_3d + cfg.lambda_2d * t.loss_2d;
            report.term_3d += t.loss_3d;
            report.term_2d += t.loss_2d;
            report.per_view[t.view] += contrib;
            report.per_keypoint[j] += contrib;
            if let Some(g) = grads.as_mut() {
                grad_rot[t.view] += t.grad_rot;
                g.translation[t.view] += t.grad_trans;
                g.depth[t.view][j] = t.grad_depth;
            }
        }
    }
    report.total = report.term_3d + cfg.lambda_2d * report.term_2d;

    if let Some(g) = grads.as_mut() {
        for (i, gr) in grad_rot.iter().enumerate() {
            if *gr != Matrix3::zeros() {
                g.rotation[i] = scene.poses[i].rot6d().pullback(gr)?;
            }
        }
    }
    Ok((report, grads))
}

pub fn total_loss(scene: &Scene, cfg: &ObjectiveConfig) -> Result<LossReport> {
    evaluate(scene, cfg, false).map(|(report, _)| report)
}

pub fn gradients(scene: &Scene, cfg: &ObjectiveConfig) -> Result<Gradients> {
    loss_and_gradients(scene, cfg).map(|(_, g)| g)
}

/// Loss and gradient from a single pass.
pub fn loss_and_gradients(scene: &Scene, cfg: &ObjectiveConfig) -> Result<(LossReport, Gradients)> {
    let (report, grads) = evaluate(scene, cfg, true)?;
    Ok((report, grads.expect("gradients requested")))
}
