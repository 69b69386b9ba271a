//! Joint optimization of rotations, translations and keypoint depths.
//!
//! Each live view contributes nine parameters (a 6D rotation and a
//! translation) and each live observation one depth. The flat parameter
//! vector is updated by Adam (or plain gradient descent) under a
//! half-cosine learning-rate decay.

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{CameraPose, Rot6D, Scene};
use crate::objective::{compute_centroids, loss_and_gradients, total_loss, LossReport, ObjectiveConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    #[default]
    Adam,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step, as a fraction of `learning_rate`.
    pub final_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seed for depth initialization.
    pub seed: u64,
    pub freeze_depths: bool,
    pub update_rule: UpdateRule,
    pub rotation_lr_scale: f64,
    pub translation_lr_scale: f64,
    /// Fraction of the steps, from the start, during which the 2D term is
    /// left out of the gradient. Zero keeps λ constant throughout.
    pub two_d_warmup: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl OptimizerConfig {
    /// Profile for synthetic scenes (`η = 0.01`).
    pub fn synthetic() -> Self {
        Self {
            steps: 10_000,
            learning_rate: 0.01,
            final_factor: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            freeze_depths: false,
            update_rule: UpdateRule::Adam,
            rotation_lr_scale: 1.0,
            translation_lr_scale: 1.0,
            two_d_warmup: 0.2,
        }
    }

    /// Profile for real captures (`η = 0.001`).
    pub fn real() -> Self {
        Self {
            learning_rate: 0.001,
            ..Self::synthetic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.final_factor > 0.0 && self.final_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "final factor must lie in (0, 1], got {}",
                self.final_factor
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("Adam epsilon must be positive".into()));
        }
        if !(self.rotation_lr_scale >= 0.0 && self.translation_lr_scale >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning-rate multipliers must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.two_d_warmup) {
            return Err(Error::InvalidConfig(format!(
                "2D warm-up fraction must lie in [0, 1), got {}",
                self.two_d_warmup
            )));
        }
        Ok(())
    }

    /// Whether the 2D term contributes to the gradient at step `s`.
    pub fn two_d_active_at(&self, s: usize) -> bool {
        s as f64 >= self.two_d_warmup * self.steps as f64
    }

    /// Learning rate applied at 0-based step `s`:
    /// `η (f + (1 - f) (1 + cos(π s / S)) / 2)`.
    pub fn learning_rate_at(&self, s: usize) -> f64 {
        let progress = s as f64 / self.steps as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * (self.final_factor + (1.0 - self.final_factor) * cosine)
    }
}

/// Fills every visible observation's depth with a draw from
/// `Uniform[ω/2, ω]`, `ω` being the mean translation norm.
pub fn init_depths(scene: &Scene, seed: u64) -> Result<Scene> {
    let omega = scene.mean_translation_norm();
    if !(omega > 0.0) {
        return Err(Error::ZeroScale);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    for row in &mut out.observations {
        for obs in row.iter_mut().flatten() {
            if obs.m > 0.0 {
                obs.z = rng.random_range(0.5 * omega..=omega);
            }
        }
    }
    Ok(out)
}

/// Adam moment buffers over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            first: vec![0.0; n],
            second: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected Adam update; `scales` are per-parameter
    /// learning-rate multipliers.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, scales: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grads[k];
            self.first[k] = self.beta1 * self.first[k] + (1.0 - self.beta1) * g;
            self.second[k] = self.beta2 * self.second[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[k] / c1;
            let v_hat = self.second[k] / c2;
            params[k] -= lr * scales[k] * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Rotation(usize),
    Translation(usize),
    Depth(usize, usize),
}

/// Which parameters the objective actually depends on.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    live_views: Vec<bool>,
    slots: Vec<Slot>,
    scales: Vec<f64>,
}

impl Layout {
    fn new(scene: &Scene, opt: &OptimizerConfig, obj: &ObjectiveConfig) -> Self {
        let active = compute_centroids(scene, obj).active_mask;
        let live_depth = |i: usize, j: usize| active[j] && scene.visible(i, j).is_some();
        let live_views: Vec<bool> = (0..scene.n_views())
            .map(|i| (0..scene.n_keypoints()).any(|j| live_depth(i, j)))
            .collect();

        let mut slots = Vec::new();
        let mut scales = Vec::new();
        for (i, _) in live_views.iter().enumerate().filter(|(_, live)| **live) {
            slots.extend((0..6).map(|_| Slot::Rotation(i)));
            scales.extend([opt.rotation_lr_scale; 6]);
            slots.extend((0..3).map(|_| Slot::Translation(i)));
            scales.extend([opt.translation_lr_scale; 3]);
        }
        if !opt.freeze_depths {
            for i in 0..scene.n_views() {
                for j in 0..scene.n_keypoints() {
                    if live_depth(i, j) {
                        slots.push(Slot::Depth(i, j));
                        scales.push(1.0);
                    }
                }
            }
        }
        Self {
            live_views,
            slots,
            scales,
        }
    }
}

/// One row of the loss history: the loss at which the update was computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub term_3d: f64,
    pub term_2d: f64,
}

/// What a progress hook sees after each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    scene: Scene,
    layout: Layout,
    params: Vec<f64>,
    adam: Adam,
    step: usize,
    history: Vec<StepRecord>,
}

impl OptimizerState {
    pub fn new(scene: Scene, opt: &OptimizerConfig, obj: &ObjectiveConfig) -> Self {
        let layout = Layout::new(&scene, opt, obj);
        let params = layout
            .slots
            .iter()
            .enumerate()
            .map(|(k, slot)| match *slot {
                Slot::Rotation(i) => {
                    let first = layout.slots.iter().position(|s| *s == Slot::Rotation(i)).unwrap();
                    scene.poses[i].rot6d().0[k - first]
                }
                Slot::Translation(i) => {
                    let first = layout.slots.iter().position(|s| *s == Slot::Translation(i)).unwrap();
                    scene.poses[i].translation()[k - first]
                }
                Slot::Depth(i, j) => scene.observations[i][j].unwrap().z,
            })
            .collect::<Vec<_>>();
        let adam = Adam::new(params.len(), opt.adam_beta1, opt.adam_beta2, opt.adam_eps);
        Self {
            scene,
            layout,
            params,
            adam,
            step: 0,
            history: Vec::new(),
        }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn into_scene(self) -> Scene {
        self.scene
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    /// Number of optimized scalars: nine per live view plus live depths.
    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Views with no live keypoint; gradients never touch them.
    pub fn unoptimized_views(&self) -> Vec<usize> {
        self.layout
            .live_views
            .iter()
            .enumerate()
            .filter(|(_, live)| !**live)
            .map(|(i, _)| i)
            .collect()
    }

    /// Applies one update. On error the state is left as it was.
    pub fn step(&mut self, opt: &OptimizerConfig, obj: &ObjectiveConfig) -> Result<StepRecord> {
        let s = self.step;
        let lr = opt.learning_rate_at(s);
        let effective = if opt.two_d_active_at(s) {
            *obj
        } else {
            ObjectiveConfig { lambda_2d: 0.0, ..*obj }
        };
        let (report, grads) = loss_and_gradients(&self.scene, &effective)?;
        // Always the configured objective, so rows stay comparable across
        // the warm-up boundary.
        let total = report.term_3d + obj.lambda_2d * report.term_2d;
        if !total.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss { step: s });
        }

        let mut flat = vec![0.0; self.params.len()];
        let mut k = 0;
        while k < flat.len() {
            match self.layout.slots[k] {
                Slot::Rotation(i) => {
                    flat[k..k + 6].copy_from_slice(&grads.rotation[i]);
                    k += 6;
                }
                Slot::Translation(i) => {
                    flat[k..k + 3].copy_from_slice(grads.translation[i].as_slice());
                    k += 3;
                }
                Slot::Depth(i, j) => {
                    flat[k] = grads.depth[i][j];
                    k += 1;
                }
            }
        }

        let mut params = self.params.clone();
        let mut adam = self.adam.clone();
        match opt.update_rule {
            UpdateRule::Adam => adam.update(&mut params, &flat, lr, &self.layout.scales),
            UpdateRule::GradientDescent => {
                for ((p, g), scale) in params.iter_mut().zip(&flat).zip(&self.layout.scales) {
                    *p -= lr * scale * g;
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { step: s });
        }
        let scene = self.unpack(&params)?;

        let record = StepRecord {
            step: s,
            lr,
            total,
            term_3d: report.term_3d,
            term_2d: report.term_2d,
        };
        self.scene = scene;
        self.params = params;
        self.adam = adam;
        self.step += 1;
        self.history.push(record);
        Ok(record)
    }

    fn unpack(&self, params: &[f64]) -> Result<Scene> {
        let mut scene = self.scene.clone();
        let mut k = 0;
        while k < params.len() {
            match self.layout.slots[k] {
                Slot::Rotation(i) => {
                    let mut r = [0.0; 6];
                    r.copy_from_slice(&params[k..k + 6]);
                    let t = Vector3::new(params[k + 6], params[k + 7], params[k + 8]);
                    scene.poses[i] = CameraPose::new(Rot6D(r), t)?;
                    k += 9;
                }
                Slot::Translation(_) => unreachable!("translation always follows rotation"),
                Slot::Depth(i, j) => {
                    if let Some(obs) = scene.observations[i][j].as_mut() {
                        obs.z = params[k];
                    }
                    k += 1;
                }
            }
        }
        Ok(scene)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scene: Scene,
    /// Loss evaluated before each update, one row per step.
    pub history: Vec<StepRecord>,
    /// Loss of the returned scene.
    pub final_loss: LossReport,
    pub unoptimized_views: Vec<usize>,
    pub parameter_count: usize,
}

/// A failed run, with the history recorded up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub history: Vec<StepRecord>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            history: Vec::new(),
        }
    }
}

pub fn run(scene: &Scene, opt: &OptimizerConfig, obj: &ObjectiveConfig) -> Result<RunOutput, RunFailure> {
    run_with_progress(scene, opt, obj, |_| {})
}

/// Runs `opt.steps` updates, calling `progress` after each one.
pub fn run_with_progress(
    scene: &Scene,
    opt: &OptimizerConfig,
    obj: &ObjectiveConfig,
    mut progress: impl FnMut(&Progress),
) -> Result<RunOutput, RunFailure> {
    opt.validate()?;
    obj.validate()?;
    if compute_centroids(scene, obj).n_active() == 0 {
        return Err(Error::NoConstraints.into());
    }
    let mut state = OptimizerState::new(scene.clone(), opt, obj);
    for _ in 0..opt.steps {
        match state.step(opt, obj) {
            Ok(rec) => progress(&Progress {
                step: rec.step,
                lr: rec.lr,
                total: rec.total,
            }),
            Err(error) => {
                return Err(RunFailure {
                    error,
                    history: state.history,
                })
            }
        }
    }
    let final_loss = total_loss(state.scene(), obj)?;
    let unoptimized_views = state.unoptimized_views();
    let parameter_count = state.parameter_count();
    Ok(RunOutput {
        history: state.history.clone(),
        scene: state.into_scene(),
        final_loss,
        unoptimized_views,
        parameter_count,
    })
}
