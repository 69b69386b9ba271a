//! On-disk formats: the JSON scene document, the NeRF-style camera export
//! and the loss-history CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{orthonormality_error, CameraIntrinsics, CameraPose, KeypointObservation, Rot6D, Scene};
use crate::optimizer::{init_depths, StepRecord};

pub const SCENE_FILE_VERSION: u32 = 1;
pub const DEFAULT_UNITS: &str = "meters";

/// Orthonormality tolerance for exported rotation blocks.
pub const EXPORT_ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for IntrinsicsRecord {
    fn from(k: &CameraIntrinsics) -> Self {
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl IntrinsicsRecord {
    pub fn to_intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rot6d: [f64; 6],
    pub translation: [f64; 3],
}

impl From<&CameraPose> for PoseRecord {
    fn from(p: &CameraPose) -> Self {
        let t = p.translation();
        Self {
            rot6d: p.rot6d().0,
            translation: [t.x, t.y, t.z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<CameraPose> {
        CameraPose::new(Rot6D(self.rot6d), Vector3::from(self.translation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub u: f64,
    pub v: f64,
    pub m: f64,
    /// Absent until depths have been initialized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub id: String,
    pub pose: Option<PoseRecord>,
    /// Keyed by keypoint name; keypoints the view does not see are left out.
    pub observations: IndexMap<String, ObservationRecord>,
}

/// The scene document exchanged between commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    pub units: String,
    pub intrinsics: IntrinsicsRecord,
    pub keypoint_names: Vec<String>,
    pub views: Vec<ViewRecord>,
}

/// How to fill what a scene document leaves open.
#[derive(Debug, Clone, Default)]
pub struct DecodeOptions {
    /// Used for every view whose pose is `null`.
    pub fallback_poses: Option<Vec<CameraPose>>,
    /// Seed for drawing depths that the document omits.
    pub depth_seed: Option<u64>,
}

pub fn view_id(i: usize) -> String {
    format!("view_{i:03}")
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, units: &str) -> Self {
        let views = scene
            .poses
            .iter()
            .zip(&scene.observations)
            .enumerate()
            .map(|(i, (pose, row))| ViewRecord {
                id: view_id(i),
                pose: Some(pose.into()),
                observations: row
                    .iter()
                    .zip(&scene.keypoint_names)
                    .filter_map(|(obs, name)| {
                        obs.map(|o| {
                            (
                                name.clone(),
                                ObservationRecord {
                                    u: o.u,
                                    v: o.v,
                                    m: o.m,
                                    z: Some(o.z),
                                },
                            )
                        })
                    })
                    .collect(),
            })
            .collect();
        Self {
            version: SCENE_FILE_VERSION,
            units: units.to_owned(),
            intrinsics: (&scene.intrinsics).into(),
            keypoint_names: scene.keypoint_names.clone(),
            views,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        file.check_structure()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data always serializes")
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn is_metric(&self) -> bool {
        self.units == DEFAULT_UNITS
    }

    pub fn has_all_poses(&self) -> bool {
        self.views.iter().all(|v| v.pose.is_some())
    }

    pub fn has_all_depths(&self) -> bool {
        self.views
            .iter()
            .flat_map(|v| v.observations.values())
            .all(|o| o.m == 0.0 || o.z.is_some())
    }

    pub fn clear_depths(&mut self) {
        for obs in self.views.iter_mut().flat_map(|v| v.observations.values_mut()) {
            obs.z = None;
        }
    }

    pub fn set_poses(&mut self, poses: &[CameraPose]) -> Result<()> {
        if poses.len() != self.views.len() {
            return Err(Error::MismatchedViews {
                estimated: poses.len(),
                reference: self.views.len(),
            });
        }
        for (view, pose) in self.views.iter_mut().zip(poses) {
            view.pose = Some(pose.into());
        }
        Ok(())
    }

    /// Every view's pose; fails with [`Error::PosesRequired`] if any is null.
    pub fn poses(&self) -> Result<Vec<CameraPose>> {
        self.views
            .iter()
            .map(|v| v.pose.as_ref().ok_or(Error::PosesRequired)?.to_pose())
            .collect()
    }

    pub fn check_structure(&self) -> Result<()> {
        if self.version != SCENE_FILE_VERSION {
            return Err(Error::Format(format!("unrecognized version {}", self.version)));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.keypoint_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Format(format!("duplicate keypoint name {name:?}")));
            }
        }
        for view in &self.views {
            if let Some(name) = view.observations.keys().find(|k| !seen.contains(k.as_str())) {
                return Err(Error::Format(format!(
                    "view {:?} observes undeclared keypoint {name:?}",
                    view.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_scene(&self, opts: &DecodeOptions) -> Result<Scene> {
        self.check_structure()?;
        let intrinsics = self.intrinsics.to_intrinsics()?;
        if let Some(fallback) = &opts.fallback_poses {
            if fallback.len() != self.views.len() {
                return Err(Error::MismatchedViews {
                    estimated: fallback.len(),
                    reference: self.views.len(),
                });
            }
        }
        let poses = self
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| match (&v.pose, &opts.fallback_poses) {
                (Some(p), _) => p.to_pose(),
                (None, Some(fallback)) => Ok(fallback[i]),
                (None, None) => Err(Error::PosesRequired),
            })
            .collect::<Result<Vec<_>>>()?;

        let missing_depths = !self.has_all_depths();
        if missing_depths && opts.depth_seed.is_none() {
            return Err(Error::MissingDepths);
        }
        // Placeholder depth for missing entries; replaced by a draw below.
        let observations = self
            .views
            .iter()
            .map(|v| {
                self.keypoint_names
                    .iter()
                    .map(|name| {
                        v.observations.get(name).map(|o| {
                            let z = o.z.unwrap_or(if o.m > 0.0 { 1.0 } else { 0.0 });
                            KeypointObservation::new(o.u, o.v, o.m, z)
                        })
                    })
                    .collect()
            })
            .collect();
        let scene = Scene::new(intrinsics, poses, observations, self.keypoint_names.clone())?;
        if !missing_depths {
            return Ok(scene);
        }

        let mut drawn = init_depths(&scene, opts.depth_seed.expect("checked above"))?;
        for (row, view) in drawn.observations.iter_mut().zip(&self.views) {
            for (slot, name) in row.iter_mut().zip(&self.keypoint_names) {
                if let (Some(obs), Some(rec)) = (slot.as_mut(), view.observations.get(name)) {
                    if let Some(z) = rec.z {
                        obs.z = z;
                    }
                }
            }
        }
        Ok(drawn)
    }
}

/// One exported camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportFrame {
    pub file_path: String,
    /// Camera-to-world, row-major, OpenGL camera axes (x right, y up,
    /// looking down −z).
    pub transform_matrix: [[f64; 4]; 4],
}

/// Camera file in the layout NeRF-family trainers read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraExportFile {
    pub camera_angle_x: f64,
    pub fl_x: f64,
    pub fl_y: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    pub frames: Vec<ExportFrame>,
}

// Flips y and z: OpenCV camera axes to OpenGL ones and back.
fn flip_yz() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

impl CameraExportFile {
    pub fn from_parts(intrinsics: &CameraIntrinsics, ids: &[String], poses: &[CameraPose]) -> Self {
        let frames = ids
            .iter()
            .zip(poses)
            .map(|(id, pose)| {
                let rot = pose.rotation() * flip_yz();
                let mut m = Matrix4::identity();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(pose.translation());
                ExportFrame {
                    file_path: format!("images/{id}"),
                    transform_matrix: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
                }
            })
            .collect();
        Self {
            camera_angle_x: intrinsics.angle_x(),
            fl_x: intrinsics.fx,
            fl_y: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            w: intrinsics.width,
            h: intrinsics.height,
            frames,
        }
    }

    pub fn from_scene_file(file: &SceneFile) -> Result<Self> {
        let poses = file.poses()?;
        let intrinsics = file.intrinsics.to_intrinsics()?;
        let ids: Vec<_> = file.views.iter().map(|v| v.id.clone()).collect();
        Ok(Self::from_parts(&intrinsics, &ids, &poses))
    }

    /// Reads the poses back in the crate's own camera convention.
    pub fn poses(&self) -> Result<Vec<CameraPose>> {
        self.frames
            .iter()
            .map(|f| {
                let m = &f.transform_matrix;
                let rot = Matrix3::from_fn(|r, c| m[r][c]) * flip_yz();
                CameraPose::from_matrix(&rot, Vector3::new(m[0][3], m[1][3], m[2][3]))
            })
            .collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let expected = 2.0 * (f64::from(self.w) / (2.0 * self.fl_x)).atan();
        if (self.camera_angle_x - expected).abs() > 1e-12 * expected.abs().max(1.0) {
            return Err(Error::Format(format!(
                "camera_angle_x {} does not match 2·atan(w / 2·fl_x) = {expected}",
                self.camera_angle_x
            )));
        }
        for f in &self.frames {
            let m = &f.transform_matrix;
            let block = Matrix3::from_fn(|r, c| m[r][c]);
            let err = orthonormality_error(&block);
            if err > EXPORT_ORTHONORMAL_TOL {
                return Err(Error::Format(format!(
                    "{}: rotation block not orthonormal (error {err:.3e})",
                    f.file_path
                )));
            }
            if m[3] != [0.0, 0.0, 0.0, 1.0] {
                return Err(Error::Format(format!(
                    "{}: bottom row is not [0, 0, 0, 1]",
                    f.file_path
                )));
            }
        }
        Ok(())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_scene_file(path: &Path) -> Result<SceneFile> {
    let file: SceneFile = read_json(path)?;
    file.check_structure()?;
    Ok(file)
}

pub fn load_camera_export(path: &Path) -> Result<CameraExportFile> {
    read_json(path)
}

pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,lr,total,term_3d,term_2d\n");
    for r in history {
        writeln!(out, "{},{},{},{},{}", r.step, r.lr, r.total, r.term_3d, r.term_2d).expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::scenegen::{generate_scene, SceneGenConfig};

    fn small() -> Scene {
        generate_scene(&SceneGenConfig {
            n_views: 6,
            n_keypoints: 8,
            seed: 2,
            ..Default::default()
        })
        .unwrap()
        .scene
    }

    #[test]
    fn scene_round_trip_is_exact() {
        let scene = small();
        let file = SceneFile::from_scene(&scene, DEFAULT_UNITS);
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: SceneFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_scene(&DecodeOptions::default()).unwrap(), scene);
    }

    #[test]
    fn null_pose_requires_fallback() {
        let scene = small();
        let mut file = SceneFile::from_scene(&scene, DEFAULT_UNITS);
        file.views[3].pose = None;
        assert!(matches!(file.poses(), Err(Error::PosesRequired)));
        assert!(matches!(
            file.to_scene(&DecodeOptions::default()),
            Err(Error::PosesRequired)
        ));
        let opts = DecodeOptions {
            fallback_poses: Some(vec![CameraPose::identity(); 6]),
            depth_seed: None,
        };
        let decoded = file.to_scene(&opts).unwrap();
        assert_eq!(decoded.poses[3], CameraPose::identity());
        assert_eq!(decoded.poses[2], scene.poses[2]);
    }

    #[test]
    fn cleared_depths_need_a_seed() {
        let mut file = SceneFile::from_scene(&small(), DEFAULT_UNITS);
        file.clear_depths();
        assert!(!serde_json::to_string(&file).unwrap().contains("\"z\""));
        assert!(matches!(
            file.to_scene(&DecodeOptions::default()),
            Err(Error::MissingDepths)
        ));
        let opts = DecodeOptions {
            depth_seed: Some(5),
            ..Default::default()
        };
        let a = file.to_scene(&opts).unwrap();
        assert_eq!(a, file.to_scene(&opts).unwrap());
        let omega = a.mean_translation_norm();
        for obs in a.observations.iter().flatten().flatten() {
            assert!(obs.z >= 0.5 * omega && obs.z <= omega);
        }
    }

    #[test]
    fn partial_depths_keep_known_values() {
        let scene = small();
        let mut file = SceneFile::from_scene(&scene, DEFAULT_UNITS);
        let (name, rec) = file.views[0].observations.iter_mut().next().unwrap();
        let name = name.clone();
        rec.z = None;
        let decoded = file
            .to_scene(&DecodeOptions {
                depth_seed: Some(1),
                ..Default::default()
            })
            .unwrap();
        let k = scene.keypoint_names.iter().position(|n| *n == name).unwrap();
        for (i, row) in decoded.observations.iter().enumerate() {
            for (j, obs) in row.iter().enumerate() {
                if (i, j) != (0, k) {
                    assert_eq!(obs, &scene.observations[i][j]);
                }
            }
        }
    }

    #[test]
    fn undeclared_keypoint_is_rejected() {
        let mut file = SceneFile::from_scene(&small(), DEFAULT_UNITS);
        file.views[1].observations.insert(
            "ghost".into(),
            ObservationRecord {
                u: 1.0,
                v: 1.0,
                m: 1.0,
                z: Some(1.0),
            },
        );
        assert!(matches!(file.check_structure(), Err(Error::Format(_))));
        file.views[1].observations.shift_remove("ghost");
        file.version = 2;
        assert!(matches!(file.check_structure(), Err(Error::Format(_))));
    }

    #[test]
    fn export_round_trip_and_axes() {
        let scene = small();
        let file = SceneFile::from_scene(&scene, DEFAULT_UNITS);
        let export = CameraExportFile::from_scene_file(&file).unwrap();
        export.check_invariants().unwrap();
        assert_eq!(export.frames[0].file_path, "images/view_000");
        let back = export.poses().unwrap();
        for (a, b) in scene.poses.iter().zip(&back) {
            assert_relative_eq!(a.center(), b.center(), epsilon = 1e-12);
            assert_relative_eq!(a.rotation(), b.rotation(), epsilon = 1e-12);
        }
        // OpenGL cameras look down −z, so the third column is −forward.
        let m = &export.frames[0].transform_matrix;
        let forward = scene.poses[0].rotation().column(2);
        assert_relative_eq!(m[0][2], -forward[0], epsilon = 1e-15);
        assert_relative_eq!(m[2][2], -forward[2], epsilon = 1e-15);
    }

    #[test]
    fn broken_export_is_detected() {
        let file = SceneFile::from_scene(&small(), DEFAULT_UNITS);
        let mut export = CameraExportFile::from_scene_file(&file).unwrap();
        export.frames[1].transform_matrix[0][0] *= 1.1;
        assert!(export.check_invariants().is_err());
        let mut export = CameraExportFile::from_scene_file(&file).unwrap();
        export.camera_angle_x *= 1.01;
        assert!(export.check_invariants().is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = [StepRecord {
            step: 0,
            lr: 0.01,
            total: 1.5,
            term_3d: 1.0,
            term_2d: 0.25,
        }];
        assert_eq!(history_csv(&rows), "step,lr,total,term_3d,term_2d\n0,0.01,1.5,1,0.25\n");
    }
}
