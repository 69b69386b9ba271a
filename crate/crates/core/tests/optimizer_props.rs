mod common;

use common::random_scene;
use kronc::geom::orthonormality_error;
use kronc::objective::ObjectiveConfig;
use kronc::optimizer::{run, OptimizerConfig, OptimizerState, UpdateRule};
use kronc::scenegen::{generate_scene, SceneGenConfig};

#[test]
fn rotations_stay_orthonormal_every_step() {
    let scene = random_scene(5, 6, 5);
    let obj = ObjectiveConfig::with_lambda(0.3);
    let opt = OptimizerConfig {
        steps: 300,
        learning_rate: 0.05,
        ..OptimizerConfig::synthetic()
    };
    let mut state = OptimizerState::new(scene, &opt, &obj);
    for _ in 0..opt.steps {
        state.step(&opt, &obj).unwrap();
        for pose in &state.scene().poses {
            let r = pose.rotation();
            assert!(orthonormality_error(r) < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn consistent_scene_is_a_fixpoint() {
    let gt = generate_scene(&SceneGenConfig {
        n_views: 10,
        n_keypoints: 16,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let opt = OptimizerConfig {
        steps: 50,
        ..OptimizerConfig::synthetic()
    };
    let out = run(&gt.scene, &opt, &ObjectiveConfig::for_scene(&gt.scene)).unwrap();
    for (a, b) in out.scene.poses.iter().zip(&gt.gt_poses) {
        assert!((a.rotation() - b.rotation()).norm() < 1e-9);
        assert!((a.translation() - b.translation()).norm() < 1e-9);
    }
}

#[test]
fn identical_inputs_give_identical_histories() {
    let scene = random_scene(9, 5, 4);
    let obj = ObjectiveConfig::with_lambda(0.2);
    let opt = OptimizerConfig {
        steps: 200,
        ..OptimizerConfig::synthetic()
    };
    let a = run(&scene, &opt, &obj).unwrap();
    let b = run(&scene, &opt, &obj).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.scene, b.scene);
}

#[test]
fn plain_gradient_descent_also_descends() {
    let scene = random_scene(2, 5, 4);
    let obj = ObjectiveConfig::with_lambda(0.1);
    let opt = OptimizerConfig {
        steps: 200,
        learning_rate: 0.01,
        update_rule: UpdateRule::GradientDescent,
        two_d_warmup: 0.0,
        ..OptimizerConfig::synthetic()
    };
    let out = run(&scene, &opt, &obj).unwrap();
    assert!(out.final_loss.total < out.history[0].total);
}
