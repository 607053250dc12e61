//! Evaluation metrics over root-relative 3D pose sequences (millimeters).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::CameraRotation;
use crate::skeleton::{Pose3D, SkeletonTopology};

pub const PCK_THRESHOLD_MM: f64 = 150.0;

fn check(pred: &[Pose3D], gt: &[Pose3D]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames vs {}",
            pred.len(),
            gt.len()
        )));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.num_joints() != g.num_joints() {
            return Err(Error::ShapeMismatch(format!(
                "{} joints vs {}",
                p.num_joints(),
                g.num_joints()
            )));
        }
    }
    Ok(())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn joint_errors<'a>(pred: &'a [Pose3D], gt: &'a [Pose3D]) -> impl Iterator<Item = f64> + 'a {
    pred.iter()
        .zip(gt)
        .flat_map(|(p, g)| p.coords.iter().zip(&g.coords).map(|(a, b)| dist(*a, *b)))
}

/// Mean per-joint Euclidean distance.
pub fn mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    check(pred, gt)?;
    let (sum, n) = joint_errors(pred, gt).fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Percentage of joints closer than `threshold` to the ground truth.
pub fn pck3d(pred: &[Pose3D], gt: &[Pose3D], threshold: f64) -> Result<f64> {
    check(pred, gt)?;
    let (hits, n) = joint_errors(pred, gt).fold((0usize, 0usize), |(h, n), e| {
        (h + usize::from(e < threshold), n + 1)
    });
    Ok(if n == 0 {
        100.0
    } else {
        100.0 * hits as f64 / n as f64
    })
}

/// `x ↦ scale·R·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: CameraRotation,
    pub translation: [f64; 3],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: CameraRotation::identity(),
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, pose: &Pose3D) -> Pose3D {
        let r = self.rotation.matrix();
        let t = Vector3::from(self.translation);
        Pose3D::new(
            pose.coords
                .iter()
                .map(|c| (self.scale * (r * Vector3::from(*c)) + t).into())
                .collect(),
        )
    }
}

/// Least-squares similarity transform taking `pred` onto `gt` (Umeyama's
/// closed form with reflection correction).
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<(Pose3D, SimilarityTransform)> {
    let k = pred.num_joints();
    if k != gt.num_joints() {
        return Err(Error::ShapeMismatch(format!(
            "{k} joints vs {}",
            gt.num_joints()
        )));
    }
    if k < 3 {
        return Err(Error::DegenerateConfiguration(format!("{k} joints")));
    }
    let to_vec = |p: &Pose3D| {
        p.coords
            .iter()
            .map(|c| Vector3::from(*c))
            .collect::<Vec<_>>()
    };
    let (x, y) = (to_vec(pred), to_vec(gt));
    let mx = x.iter().sum::<Vector3<f64>>() / k as f64;
    let my = y.iter().sum::<Vector3<f64>>() / k as f64;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (a, b) in x.iter().zip(&y) {
        let (da, db) = (a - mx, b - my);
        cov += db * da.transpose();
        var_x += da.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    // Rank < 2 means the source points are collinear or coincident and the
    // rotation is not determined.
    let tol = 1e-12 * sv[0].max(f64::MIN_POSITIVE);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if var_x <= 0.0 || rank < 2 {
        return Err(Error::DegenerateConfiguration(
            "collinear or coincident joints".into(),
        ));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let scale = (sv[0] * d[(0, 0)] + sv[1] * d[(1, 1)] + sv[2] * d[(2, 2)]) / var_x;
    let t = my - scale * r * mx;
    let rotation = CameraRotation::new(r)?;
    let transform = SimilarityTransform {
        scale,
        rotation,
        translation: t.into(),
    };
    Ok((transform.apply(pred), transform))
}

/// MPJPE after per-frame Procrustes alignment.
pub fn p_mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    check(pred, gt)?;
    let aligned = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| procrustes_align(p, g).map(|(a, _)| a))
        .collect::<Result<Vec<_>>>()?;
    mpjpe(&aligned, gt)
}

/// Mean bone-direction angle error.
///
/// Angles come from `atan2(|u×v|, u·v)`, which equals the arccos of the
/// normalized dot product but stays accurate for nearly parallel bones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleError {
    /// Radians.
    pub mean: f64,
    pub counted: usize,
    /// Bones where either vector had zero length.
    pub skipped: usize,
}

pub fn mean_angle_error(
    pred: &[Pose3D],
    gt: &[Pose3D],
    topology: &SkeletonTopology,
) -> Result<AngleError> {
    check(pred, gt)?;
    let (mut sum, mut counted, mut skipped) = (0.0, 0, 0);
    for (p, g) in pred.iter().zip(gt) {
        for &(a, b) in &topology.bones {
            let u = Vector3::from(p.coords[b]) - Vector3::from(p.coords[a]);
            let v = Vector3::from(g.coords[b]) - Vector3::from(g.coords[a]);
            let (nu, nv) = (u.norm(), v.norm());
            if nu == 0.0 || nv == 0.0 {
                skipped += 1;
                continue;
            }
            sum += u.cross(&v).norm().atan2(u.dot(&v));
            counted += 1;
        }
    }
    Ok(AngleError {
        mean: if counted == 0 {
            0.0
        } else {
            sum / counted as f64
        },
        counted,
        skipped,
    })
}

/// Mean over bones of the variance of that bone's length across frames.
pub fn bone_length_variance(seq: &[Pose3D], topology: &SkeletonTopology) -> f64 {
    let m = topology.num_bones();
    if seq.is_empty() || m == 0 {
        return 0.0;
    }
    let n = seq.len() as f64;
    let mut total = 0.0;
    for &(a, b) in &topology.bones {
        let lens: Vec<f64> = seq.iter().map(|p| dist(p.coords[a], p.coords[b])).collect();
        let mean = lens.iter().sum::<f64>() / n;
        total += lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    }
    total / m as f64
}

/// Aggregate report printed by the `eval` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpjpe: f64,
    pub p_mpjpe: f64,
    pub pck150: f64,
    pub mae: f64,
    pub frames: usize,
}

pub fn evaluate(
    pred: &[Pose3D],
    gt: &[Pose3D],
    topology: &SkeletonTopology,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        mpjpe: mpjpe(pred, gt)?,
        p_mpjpe: p_mpjpe(pred, gt)?,
        pck150: pck3d(pred, gt, PCK_THRESHOLD_MM)?,
        mae: mean_angle_error(pred, gt, topology)?.mean,
        frames: pred.len(),
    })
}
