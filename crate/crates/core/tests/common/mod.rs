//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use kronc::geom::{axis_angle, CameraIntrinsics, CameraPose, KeypointObservation, Rot6D, Scene};
use kronc::objective::{total_loss, Gradients, ObjectiveConfig};
use kronc::scenegen::look_at;
use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Unit-scale scene with noisy poses, noisy depths, fractional weights and
/// deliberately unnormalized 6D rotations.
pub fn random_scene(seed: u64, n_views: usize, n_keypoints: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = CameraIntrinsics::new(1.5, 1.4, 0.5, 0.5, 1, 1).unwrap();
    let points: Vec<Vector3<f64>> = (0..n_keypoints)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
        .collect();

    let mut poses = Vec::new();
    let mut observations = Vec::new();
    for _ in 0..n_views {
        let azimuth: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let elevation: f64 = rng.random_range(-0.6..0.6);
        let center = Vector3::new(
            3.0 * elevation.cos() * azimuth.cos(),
            3.0 * elevation.cos() * azimuth.sin(),
            3.0 * elevation.sin(),
        );
        let truth = look_at(&center, &Vector3::zeros()).unwrap();
        let row = points
            .iter()
            .map(|p| {
                let q = truth.to_camera(p);
                let u = intr.fx * q.x / q.z + intr.cx;
                let v = intr.fy * q.y / q.z + intr.cy;
                let m = [1.0, 1.0, 0.6, 0.3][rng.random_range(0..4)];
                let z = q.z * rng.random_range(0.8..1.2);
                Some(KeypointObservation::new(u, v, m, z))
            })
            .collect::<Vec<_>>();
        observations.push(row);

        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let noisy_rot = truth.rotation() * axis_angle(&axis, rng.random_range(0.02..0.1));
        let noisy_t = center + Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        let mut r = Rot6D::from_matrix(&noisy_rot).unwrap().0;
        let (s1, s2, mix) = (
            rng.random_range(0.7..1.4),
            rng.random_range(0.7..1.4),
            rng.random_range(-0.3..0.3),
        );
        let a1 = [r[0] * s1, r[1] * s1, r[2] * s1];
        for k in 0..3 {
            r[3 + k] = r[3 + k] * s2 + mix * a1[k];
            r[k] = a1[k];
        }
        poses.push(CameraPose::new(Rot6D(r), noisy_t).unwrap());
    }
    // One dropped observation per keypoint beyond the first two views.
    if n_views > 2 {
        for j in (0..n_keypoints).step_by(2) {
            observations[2 + j % (n_views - 2)][j] = None;
        }
    }
    let names = (0..n_keypoints).map(|j| format!("k{j}")).collect();
    Scene::new(intr, poses, observations, names).unwrap()
}

fn with_param(scene: &Scene, slot: Param, value: f64) -> Scene {
    let mut s = scene.clone();
    match slot {
        Param::Rot(i, k) => {
            let mut r = s.poses[i].rot6d().0;
            r[k] = value;
            s.poses[i] = CameraPose::new(Rot6D(r), *s.poses[i].translation()).unwrap();
        }
        Param::Trans(i, k) => {
            let mut t = *s.poses[i].translation();
            t[k] = value;
            s.poses[i] = s.poses[i].with_translation(t);
        }
        Param::Depth(i, j) => s.observations[i][j].as_mut().unwrap().z = value,
    }
    s
}

#[derive(Debug, Clone, Copy)]
pub enum Param {
    Rot(usize, usize),
    Trans(usize, usize),
    Depth(usize, usize),
}

pub fn all_params(scene: &Scene) -> Vec<Param> {
    let mut out = Vec::new();
    for i in 0..scene.n_views() {
        out.extend((0..6).map(|k| Param::Rot(i, k)));
        out.extend((0..3).map(|k| Param::Trans(i, k)));
        for j in 0..scene.n_keypoints() {
            if scene.visible(i, j).is_some() {
                out.push(Param::Depth(i, j));
            }
        }
    }
    out
}

pub fn param_value(scene: &Scene, p: Param) -> f64 {
    match p {
        Param::Rot(i, k) => scene.poses[i].rot6d().0[k],
        Param::Trans(i, k) => scene.poses[i].translation()[k],
        Param::Depth(i, j) => scene.observations[i][j].unwrap().z,
    }
}

pub fn analytic(g: &Gradients, p: Param) -> f64 {
    match p {
        Param::Rot(i, k) => g.rotation[i][k],
        Param::Trans(i, k) => g.translation[i][k],
        Param::Depth(i, j) => g.depth[i][j],
    }
}

/// Central difference of the total loss along one parameter.
pub fn central_difference(scene: &Scene, cfg: &ObjectiveConfig, p: Param, h: f64) -> f64 {
    let x = param_value(scene, p);
    let plus = total_loss(&with_param(scene, p, x + h), cfg).unwrap().total;
    let minus = total_loss(&with_param(scene, p, x - h), cfg).unwrap().total;
    (plus - minus) / (2.0 * h)
}

/// Worst violation ratio `|a - fd| / (rel * max(|a|, |fd|) + floor)`;
/// at most 1 means every coordinate passes.
pub fn worst_gradient_violation(scene: &Scene, cfg: &ObjectiveConfig, g: &Gradients) -> (f64, Option<Param>) {
    let mut worst = (0.0, None);
    for p in all_params(scene) {
        let a = analytic(g, p);
        let fd = central_difference(scene, cfg, p, FD_STEP);
        let ratio = (a - fd).abs() / (FD_REL_TOL * a.abs().max(fd.abs()) + FD_ABS_FLOOR);
        if ratio > worst.0 {
            worst = (ratio, Some(p));
        }
    }
    worst
}
