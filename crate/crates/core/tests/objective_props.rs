mod common;

use common::random_scene;
use kronc::geom::Scene;
use kronc::objective::{gradients, total_loss, ObjectiveConfig};
use kronc::scenegen::{generate_scene, SceneGenConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn permuted(scene: &Scene, views: &[usize], keypoints: &[usize]) -> Scene {
    let mut out = scene.clone();
    out.poses = views.iter().map(|&i| scene.poses[i]).collect();
    out.observations = views
        .iter()
        .map(|&i| keypoints.iter().map(|&j| scene.observations[i][j]).collect())
        .collect();
    out.keypoint_names = keypoints.iter().map(|&j| scene.keypoint_names[j].clone()).collect();
    out
}

#[test]
fn relabeling_views_and_keypoints_keeps_the_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..10 {
        let scene = random_scene(seed, 6, 5);
        let cfg = ObjectiveConfig::with_lambda(0.4);
        let base = total_loss(&scene, &cfg).unwrap().total;
        let mut views: Vec<usize> = (0..6).collect();
        let mut kps: Vec<usize> = (0..5).collect();
        views.shuffle(&mut rng);
        kps.shuffle(&mut rng);
        let total = total_loss(&permuted(&scene, &views, &kps), &cfg).unwrap().total;
        assert!(rel_diff(base, total) < 1e-12, "seed {seed}: {base} vs {total}");
    }
}

#[test]
fn zero_weight_equals_deletion() {
    let cfg = ObjectiveConfig::with_lambda(0.4);
    let mut checked = 0;
    for seed in 0..10 {
        let scene = random_scene(seed, 6, 5);
        let (i, j) = (seed as usize % 6, (seed as usize * 3) % 5);
        let mut weighted = scene.clone();
        let mut deleted = scene.clone();
        match weighted.observations[i][j].as_mut() {
            Some(obs) => obs.m = 0.0,
            None => continue,
        }
        deleted.observations[i][j] = None;
        let a = total_loss(&weighted, &cfg).unwrap();
        let b = total_loss(&deleted, &cfg).unwrap();
        assert!(rel_diff(a.total, b.total) < 1e-12, "seed {seed}");
        assert_eq!(a.per_keypoint, b.per_keypoint);
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn pure_3d_loss_when_lambda_is_zero() {
    let scene = random_scene(3, 5, 4);
    let rep = total_loss(&scene, &ObjectiveConfig::with_lambda(0.0)).unwrap();
    assert!(rep.term_2d > 0.0);
    assert_eq!(rep.total, rep.term_3d);
}

#[test]
fn consistent_scene_has_zero_loss_and_gradient() {
    let gt = generate_scene(&SceneGenConfig {
        n_views: 12,
        n_keypoints: 20,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let cfg = ObjectiveConfig::for_scene(&gt.scene);
    assert!(total_loss(&gt.scene, &cfg).unwrap().total < 1e-12);
    let g = gradients(&gt.scene, &cfg).unwrap();
    assert!(g.max_abs() < 1e-9, "max |g| = {}", g.max_abs());
}
