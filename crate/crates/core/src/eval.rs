//! Evaluation protocol: pose perturbation, similarity alignment of camera
//! centers, and rotation / translation errors after alignment.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geom::{axis_angle, rotation_angle_between, CameraPose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    /// Standard deviation of the rotation angle, degrees.
    pub sigma_rot: f64,
    /// Standard deviation of each translation component, scene units.
    pub sigma_trans: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            sigma_rot: 4.0,
            sigma_trans: 0.5,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_rot >= 0.0 && self.sigma_rot.is_finite())
            || !(self.sigma_trans >= 0.0 && self.sigma_trans.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "noise levels must be finite and non-negative, got {} deg / {}",
                self.sigma_rot, self.sigma_trans
            )));
        }
        Ok(())
    }
}

/// Composes random noise on the right of each camera-to-world transform,
/// so cameras move about their own frame: `R' = R ΔR`, `t' = R Δt + t`.
/// `ΔR` turns about a uniform random axis by an angle drawn from
/// `N(0, σ_rot)`; `Δt ~ N(0, σ_trans² I)`.
pub fn perturb_poses(poses: &[CameraPose], cfg: &PerturbConfig) -> Result<Vec<CameraPose>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let angle_dist = Normal::new(0.0, cfg.sigma_rot.to_radians()).expect("validated sigma");
    let trans_dist = Normal::new(0.0, cfg.sigma_trans).expect("validated sigma");

    poses
        .iter()
        .map(|pose| {
            let axis = random_unit_vector(&mut rng);
            let angle = angle_dist.sample(&mut rng);
            let delta_t = Vector3::from_fn(|_, _| trans_dist.sample(&mut rng));
            let rot = pose.rotation();
            let translation = rot * delta_t + pose.translation();
            if angle == 0.0 {
                CameraPose::new(*pose.rot6d(), translation)
            } else {
                CameraPose::from_matrix(&(rot * axis_angle(&axis, angle)), translation)
            }
        })
        .collect()
}

fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// Moves a whole camera: its center is transformed as a point and its
    /// orientation is rotated.
    pub fn apply_pose(&self, pose: &CameraPose) -> Result<CameraPose> {
        CameraPose::from_matrix(&(self.rotation * pose.rotation()), self.apply(&pose.center()))
    }
}

/// Closed-form least-squares similarity taking `source` onto `target`
/// (Umeyama, with the reflection fix).
pub fn umeyama_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::MismatchedViews {
            estimated: source.len(),
            reference: target.len(),
        });
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 3 camera centers, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mean_src = source.iter().sum::<Vector3<f64>>() * inv_n;
    let mean_dst = target.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in source.iter().zip(target) {
        let ds = s - mean_src;
        cov += (d - mean_dst) * ds.transpose();
        var_src += ds.norm_squared();
    }
    cov *= inv_n;
    var_src *= inv_n;

    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    if !(var_src > 0.0) || !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateConfiguration(
            "camera centers are collinear or coincident".into(),
        ));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut sign = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let scale = (Matrix3::from_diagonal(&sv) * sign).trace() / var_src;
    let translation = mean_dst - rotation * mean_src * scale;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Mean squared distance between transformed source and target points.
pub fn alignment_residual(t: &SimilarityTransform, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(s, d)| (t.apply(s) - d).norm_squared())
        .sum::<f64>()
        / source.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean geodesic rotation error, degrees.
    pub eps_rot: f64,
    /// Mean camera-center error, reference units.
    pub eps_trans: f64,
    pub per_view_rot: Vec<f64>,
    pub per_view_trans: Vec<f64>,
    /// Transform taking the estimated set onto the reference.
    pub alignment: SimilarityTransform,
}

impl EvalReport {
    /// Translation error in centimeters, for scenes measured in meters.
    pub fn eps_trans_cm(&self) -> f64 {
        self.eps_trans * 100.0
    }
}

/// Aligns estimated camera centers to the reference, then measures the
/// per-view rotation angle and center distance.
pub fn pose_errors(estimated: &[CameraPose], reference: &[CameraPose]) -> Result<EvalReport> {
    if estimated.len() != reference.len() {
        return Err(Error::MismatchedViews {
            estimated: estimated.len(),
            reference: reference.len(),
        });
    }
    let est_centers: Vec<_> = estimated.iter().map(CameraPose::center).collect();
    let ref_centers: Vec<_> = reference.iter().map(CameraPose::center).collect();
    let alignment = umeyama_align(&est_centers, &ref_centers)?;

    let mut per_view_rot = Vec::with_capacity(estimated.len());
    let mut per_view_trans = Vec::with_capacity(estimated.len());
    for (est, gt) in estimated.iter().zip(reference) {
        let aligned_rot = alignment.rotation * est.rotation();
        per_view_rot.push(rotation_angle_between(gt.rotation(), &aligned_rot).to_degrees());
        per_view_trans.push((alignment.apply(&est.center()) - gt.center()).norm());
    }
    let n = estimated.len() as f64;
    Ok(EvalReport {
        eps_rot: per_view_rot.iter().sum::<f64>() / n,
        eps_trans: per_view_trans.iter().sum::<f64>() / n,
        per_view_rot,
        per_view_trans,
        alignment,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn ring(n: usize) -> Vec<CameraPose> {
        (0..n)
            .map(|k| {
                let a = k as f64 * 0.7;
                let r = axis_angle(&Vector3::new(0.2, 1.0, -0.3), a);
                CameraPose::from_matrix(&r, Vector3::new(4.0 * a.cos(), 4.0 * a.sin(), 0.3 * k as f64)).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_noise_is_identity() {
        let poses = ring(5);
        let out = perturb_poses(
            &poses,
            &PerturbConfig {
                sigma_rot: 0.0,
                sigma_trans: 0.0,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(out, poses);
    }

    #[test]
    fn rotation_only_noise_keeps_centers() {
        let poses = ring(4);
        let cfg = PerturbConfig {
            sigma_rot: 4.0,
            sigma_trans: 0.0,
            seed: 9,
        };
        let out = perturb_poses(&poses, &cfg).unwrap();
        for (a, b) in poses.iter().zip(&out) {
            assert_eq!(a.center(), b.center());
            let angle = rotation_angle_between(a.rotation(), b.rotation()).to_degrees();
            assert!(angle > 0.0 && angle < 20.0);
        }
        assert_eq!(out, perturb_poses(&poses, &cfg).unwrap());
    }

    #[test]
    fn translation_noise_is_in_camera_frame() {
        // Right-multiplying: the center moves by R Δt, where Δt is drawn
        // in the camera's own frame.
        let poses = ring(3);
        let cfg = PerturbConfig {
            sigma_rot: 0.0,
            sigma_trans: 0.5,
            seed: 1,
        };
        let out = perturb_poses(&poses, &cfg).unwrap();
        for (a, b) in poses.iter().zip(&out) {
            assert_eq!(a.rotation(), b.rotation());
            let local = a.rotation().transpose() * (b.center() - a.center());
            assert!(local.norm() > 0.0);
        }
    }

    #[test]
    fn identical_sets_align_to_identity() {
        let centers: Vec<_> = ring(6).iter().map(CameraPose::center).collect();
        let t = umeyama_align(&centers, &centers).unwrap();
        assert_relative_eq!(t.scale, 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_known_similarity() {
        let src: Vec<_> = ring(7).iter().map(CameraPose::center).collect();
        let truth = SimilarityTransform {
            scale: 2.0,
            rotation: axis_angle(&Vector3::z(), 30f64.to_radians()),
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let t = umeyama_align(&src, &dst).unwrap();
        assert_relative_eq!(t.scale, 2.0, epsilon = 1e-12);
        assert_relative_eq!(t.rotation, truth.rotation, epsilon = 1e-12);
        assert_relative_eq!(t.translation, truth.translation, epsilon = 1e-11);
        assert!(alignment_residual(&t, &src, &dst) < 1e-18);
    }

    #[test]
    fn mirrored_set_yields_proper_rotation() {
        let src = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(-1.0, -1.0, 0.5),
        ];
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
        let t = umeyama_align(&src, &dst).unwrap();
        assert_relative_eq!(t.rotation.determinant(), 1.0, epsilon = 1e-12);
        assert!(crate::geom::orthonormality_error(&t.rotation) < 1e-12);
    }

    #[test]
    fn collinear_centers_are_rejected() {
        let src: Vec<_> = (0..5).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama_align(&src, &src),
            Err(Error::DegenerateConfiguration(_))
        ));
        assert!(umeyama_align(&src[..2], &src[..2]).is_err());
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert!(umeyama_align(&same, &same).is_err());
    }

    #[test]
    fn errors_of_identical_sets_are_zero() {
        let poses = ring(6);
        let rep = pose_errors(&poses, &poses).unwrap();
        assert!(rep.eps_rot < 1e-6);
        assert!(rep.eps_trans < 1e-12);
    }

    #[test]
    fn single_view_extra_rotation() {
        let reference = ring(6);
        let mut estimated = reference.clone();
        let extra = axis_angle(&Vector3::new(1.0, 1.0, 0.0), 10f64.to_radians());
        estimated[2] = CameraPose::from_matrix(&(reference[2].rotation() * extra), reference[2].center()).unwrap();
        let rep = pose_errors(&estimated, &reference).unwrap();
        assert_relative_eq!(rep.per_view_rot[2], 10.0, epsilon = 1e-9);
        for (k, e) in rep.per_view_rot.iter().enumerate() {
            if k != 2 {
                assert!(*e < 1e-6);
            }
        }
        assert_relative_eq!(rep.eps_rot, 10.0 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn mismatched_counts() {
        let poses = ring(5);
        assert!(matches!(
            pose_errors(&poses, &poses[..4]),
            Err(Error::MismatchedViews {
                estimated: 5,
                reference: 4
            })
        ));
    }
}
