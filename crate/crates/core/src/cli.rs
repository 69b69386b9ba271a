//! `kronc synth | perturb | optimize | eval | export`.
//!
//! Exit codes: 0 success, 1 I/O or malformed input, 2 invalid flags or
//! configuration, 3 nothing to optimize or evaluate (no constraints, poses
//! missing), 4 numerical failure during optimization.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::Error;
use crate::eval::{perturb_poses, pose_errors, PerturbConfig};
use crate::io::{
    history_csv, load_scene_file, write_json, write_text, CameraExportFile, DecodeOptions, SceneFile, DEFAULT_UNITS,
};
use crate::objective::ObjectiveConfig;
use crate::optimizer::{run, OptimizerConfig};
use crate::scenegen::{circular_prior, generate_scene, SceneGenConfig, VisibilityPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_CONSTRAINTS: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "kronc", version, about = "Keypoint-based camera pose registration")]
pub struct Cli {
    /// Worker threads for the optimizer (0 = one per core).
    #[arg(long, global = true, env = "KRONC_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and its ground truth.
    Synth(SynthArgs),
    /// Add pose noise to a scene.
    Perturb(PerturbArgs),
    /// Refine poses and depths.
    Optimize(OptimizeArgs),
    /// Compare estimated poses to a reference after similarity alignment.
    Eval(EvalArgs),
    /// Write cameras in the NeRF transforms layout.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VisibilityArg {
    FrontFacing,
    Dropout,
    Both,
}

impl From<VisibilityArg> for VisibilityPolicy {
    fn from(v: VisibilityArg) -> Self {
        match v {
            VisibilityArg::FrontFacing => VisibilityPolicy::FrontFacingNormal,
            VisibilityArg::Dropout => VisibilityPolicy::RandomDropout,
            VisibilityArg::Both => VisibilityPolicy::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 80)]
    pub views: usize,
    #[arg(long, default_value_t = 66)]
    pub keypoints: usize,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 1.5)]
    pub height: f64,
    #[arg(long, value_enum, default_value_t = VisibilityArg::FrontFacing)]
    pub visibility: VisibilityArg,
    #[arg(long, default_value_t = 0.0)]
    pub dropout_p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Ground-truth copy.
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Rotation noise, degrees.
    #[arg(long, default_value_t = 4.0)]
    pub sigma_rot: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_trans: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the input depths instead of clearing them.
    #[arg(long)]
    pub keep_depths: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Synthetic,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Trajectory {
    Circular,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Loss history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Synthetic)]
    pub profile: Profile,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the reprojection term (default: scene scale / image diagonal).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Seed for depth initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace every pose with a circular prior.
    #[arg(long, value_enum)]
    pub init_trajectory: Option<Trajectory>,
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 1.5)]
    pub height: f64,
    #[arg(long)]
    pub freeze_depths: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub estimated: PathBuf,
    pub reference: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::MismatchedViews { .. } => EXIT_USAGE,
        Error::NoConstraints
        | Error::PosesRequired
        | Error::MissingDepths
        | Error::ZeroScale
        | Error::InactiveKeypoint(_)
        | Error::DegenerateConfiguration(_) => EXIT_NO_CONSTRAINTS,
        Error::NonFiniteLoss { .. } | Error::DegenerateRotation => EXIT_NUMERIC,
        Error::Io { .. }
        | Error::Json { .. }
        | Error::Format(_)
        | Error::InvalidScene(_)
        | Error::InvalidIntrinsics(_)
        | Error::NotARotation(_) => EXIT_IO,
    }
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        // Fails only when a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Perturb(a) => perturb(a),
        Command::Optimize(a) => optimize(a),
        Command::Eval(a) => evaluate(a),
        Command::Export(a) => export(a),
    }
}

fn synth(a: &SynthArgs) -> Result<(), Error> {
    let cfg = SceneGenConfig {
        n_views: a.views,
        n_keypoints: a.keypoints,
        radius: a.radius,
        camera_height: a.height,
        visibility: a.visibility.into(),
        dropout_p: a.dropout_p,
        seed: a.seed,
        ..Default::default()
    };
    let gt = generate_scene(&cfg)?;
    let file = SceneFile::from_scene(&gt.scene, DEFAULT_UNITS);
    write_json(&a.output, &file)?;
    write_json(&a.gt, &file)?;
    let n_obs = gt.scene.observations.iter().flatten().flatten().count();
    println!(
        "{} views, {} keypoints, {n_obs} observations -> {}",
        a.views,
        a.keypoints,
        a.output.display()
    );
    Ok(())
}

fn perturb(a: &PerturbArgs) -> Result<(), Error> {
    let mut file = load_scene_file(&a.input)?;
    let poses = file.poses()?;
    let noisy = perturb_poses(
        &poses,
        &PerturbConfig {
            sigma_rot: a.sigma_rot,
            sigma_trans: a.sigma_trans,
            seed: a.seed,
        },
    )?;
    file.set_poses(&noisy)?;
    if !a.keep_depths {
        file.clear_depths();
    }
    write_json(&a.output, &file)?;
    println!("perturbed {} views -> {}", noisy.len(), a.output.display());
    Ok(())
}

fn optimize(a: &OptimizeArgs) -> Result<(), Error> {
    let base = match a.profile {
        Profile::Synthetic => OptimizerConfig::synthetic(),
        Profile::Real => OptimizerConfig::real(),
    };
    let opt = OptimizerConfig {
        steps: a.steps.unwrap_or(base.steps),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        freeze_depths: a.freeze_depths,
        seed: a.seed,
        ..base
    };
    opt.validate()?;

    let file = load_scene_file(&a.input)?;
    let fallback_poses = match a.init_trajectory {
        Some(Trajectory::Circular) => Some(circular_prior(file.n_views(), a.radius, a.height)?),
        None => None,
    };
    let mut source = file.clone();
    if fallback_poses.is_some() {
        for v in &mut source.views {
            v.pose = None;
        }
    }
    let scene = source.to_scene(&DecodeOptions {
        fallback_poses,
        depth_seed: Some(opt.seed),
    })?;
    let obj = match a.lambda {
        Some(l) => ObjectiveConfig::with_lambda(l),
        None => ObjectiveConfig::for_scene(&scene),
    };
    obj.validate()?;

    let out = match run(&scene, &opt, &obj) {
        Ok(out) => out,
        Err(failure) => {
            if let Some(path) = &a.history {
                write_text(path, &history_csv(&failure.history))?;
            }
            return Err(failure.error);
        }
    };
    if let Some(path) = &a.history {
        write_text(path, &history_csv(&out.history))?;
    }
    let mut result = SceneFile::from_scene(&out.scene, &file.units);
    for (dst, src) in result.views.iter_mut().zip(&file.views) {
        dst.id.clone_from(&src.id);
    }
    write_json(&a.output, &result)?;

    let initial = out.history.first().map_or(f64::NAN, |r| r.total);
    println!("loss: {initial:.6e} -> {:.6e}", out.final_loss.total);
    println!("parameters: {}", out.parameter_count);
    println!(
        "optimized cameras: {} / {}",
        scene.n_views() - out.unoptimized_views.len(),
        scene.n_views()
    );
    println!("unoptimized views: {}", out.unoptimized_views.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalJson<'a> {
    eps_rot_deg: f64,
    eps_trans: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_trans_cm: Option<f64>,
    units: &'a str,
    per_view_rot_deg: &'a [f64],
    per_view_trans: &'a [f64],
    alignment_scale: f64,
    alignment_rotation: [[f64; 3]; 3],
    alignment_translation: [f64; 3],
}

fn evaluate(a: &EvalArgs) -> Result<(), Error> {
    let est = load_scene_file(&a.estimated)?;
    let reference = load_scene_file(&a.reference)?;
    let report = pose_errors(&est.poses()?, &reference.poses()?)?;
    let metric = reference.is_metric();
    println!("eps_R: {:.3} deg", report.eps_rot);
    if metric {
        println!(
            "eps_t: {:.3} {} ({:.2} cm)",
            report.eps_trans,
            reference.units,
            report.eps_trans_cm()
        );
    } else {
        println!("eps_t: {:.3} {}", report.eps_trans, reference.units);
    }
    if let Some(path) = &a.json {
        let al = &report.alignment;
        let doc = EvalJson {
            eps_rot_deg: report.eps_rot,
            eps_trans: report.eps_trans,
            eps_trans_cm: metric.then(|| report.eps_trans_cm()),
            units: &reference.units,
            per_view_rot_deg: &report.per_view_rot,
            per_view_trans: &report.per_view_trans,
            alignment_scale: al.scale,
            alignment_rotation: std::array::from_fn(|r| std::array::from_fn(|c| al.rotation[(r, c)])),
            alignment_translation: [al.translation.x, al.translation.y, al.translation.z],
        };
        write_json(path, &doc)?;
    }
    Ok(())
}

fn export(a: &ExportArgs) -> Result<(), Error> {
    let file = load_scene_file(&a.input)?;
    let out = CameraExportFile::from_scene_file(&file)?;
    out.check_invariants()?;
    write_json(&a.output, &out)?;
    println!("{} frames -> {}", out.frames.len(), a.output.display());
    Ok(())
}
