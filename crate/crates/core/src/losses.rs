//! Training losses, camera rotations and the orthographic camera.
//!
//! All squared-error losses are means over joints, axes and batch, so the
//! weights in [`LossWeights`] do not depend on batch size.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, RowOp, Tensor, Var};
use crate::skeleton::{Pose2D, Pose3D, SkeletonTopology};

/// Weights of the multi-view, 2D and adversarial terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.1,
            w3: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(self) -> Result<Self> {
        if [self.w1, self.w2, self.w3]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(format!(
                "loss weights must be finite and nonnegative: {self:?}"
            )))
        }
    }
}

/// A proper rotation (orthogonal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRotation {
    matrix: Matrix3<f64>,
}

impl CameraRotation {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let ortho = (matrix.transpose() * matrix - Matrix3::identity())
            .abs()
            .max();
        let det = matrix.determinant();
        if !(ortho <= 1e-9) || !((det - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidRotation(format!(
                "orthogonality error {ortho:e}, determinant {det}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn apply(&self, pose: &Pose3D) -> Pose3D {
        pose.transformed(&self.matrix)
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.matrix;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

impl Serialize for CameraRotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CameraRotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Self::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// `Rz(gamma) · Ry(beta) · Rx(alpha)`, angles in radians.
pub fn rotation_matrix(alpha: f64, beta: f64, gamma: f64) -> CameraRotation {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cg, -sg, 0.0, sg, cg, 0.0, 0.0, 0.0, 1.0);
    CameraRotation {
        matrix: rz * ry * rx,
    }
}

pub const YAW_RANGE: f64 = PI;
pub const TILT_RANGE: f64 = 0.2 * PI;

/// `(alpha, beta, gamma)` with beta uniform on [−π, π] and alpha, gamma
/// uniform on [−0.2π, 0.2π].
pub fn sample_pose_angles<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64, f64) {
    let alpha = rng.random_range(-TILT_RANGE..=TILT_RANGE);
    let beta = rng.random_range(-YAW_RANGE..=YAW_RANGE);
    let gamma = rng.random_range(-TILT_RANGE..=TILT_RANGE);
    (alpha, beta, gamma)
}

pub fn sample_pose_rotation<R: Rng + ?Sized>(rng: &mut R) -> CameraRotation {
    let (a, b, g) = sample_pose_angles(rng);
    rotation_matrix(a, b, g)
}

fn check_batch(a: &[Pose3D], b: &[Pose3D]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(b) {
        if x.num_joints() != y.num_joints() {
            return Err(Error::ShapeMismatch(format!(
                "{} joints vs {}",
                x.num_joints(),
                y.num_joints()
            )));
        }
    }
    Ok(())
}

/// Mean squared coordinate error.
pub fn loss_3d(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    check_batch(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for (a, b) in p.coords.iter().zip(&g.coords) {
            for ax in 0..3 {
                let d = a[ax] - b[ax];
                sum += d * d;
            }
            n += 3;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Mean squared difference between `R·view1` and `view2`.
pub fn loss_multiview(
    view1: &[Pose3D],
    view2: &[Pose3D],
    rotation: &CameraRotation,
) -> Result<f64> {
    check_batch(view1, view2)?;
    let rotated: Vec<Pose3D> = view1.iter().map(|p| rotation.apply(p)).collect();
    loss_3d(&rotated, view2)
}

/// Orthographic camera: root-center, drop depth, divide by the mean length
/// of the bones in the image plane, then map `(x, y)` to pixels `(cx + s·x, cy − s·y)` so image rows
/// grow downward while `y` points up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoProjection {
    pub root: usize,
    pub bones: Vec<(usize, usize)>,
    pub pixels_per_bone: f64,
    pub center: [f64; 2],
}

impl OrthoProjection {
    /// Defaults sized so a standing adult fits a 64×64 frame.
    pub fn for_topology(topology: &SkeletonTopology) -> Self {
        Self {
            root: topology.root_index,
            bones: topology.bones.clone(),
            pixels_per_bone: 7.0,
            center: [32.0, 30.0],
        }
    }

    fn mean_bone_length(&self, x: &[f64]) -> f64 {
        let total: f64 = self
            .bones
            .iter()
            .map(|&(p, c)| {
                let d = [x[3 * c] - x[3 * p], x[3 * c + 1] - x[3 * p + 1]];
                d[0].hypot(d[1])
            })
            .sum();
        total / self.bones.len().max(1) as f64
    }

    pub fn project(&self, pose: &Pose3D) -> Pose2D {
        let flat = pose.flat();
        let mut out = vec![0.0; pose.num_joints() * 2];
        self.forward_row(&flat, &mut out);
        Pose2D::new(out.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

const MIN_SCALE: f64 = 1e-12;

impl RowOp for OrthoProjection {
    fn output_width(&self, input_width: usize) -> Result<usize> {
        if input_width % 3 != 0 || input_width / 3 <= self.root {
            return Err(Error::ShapeMismatch(format!(
                "projection input width {input_width}"
            )));
        }
        Ok(input_width / 3 * 2)
    }

    fn forward_row(&self, x: &[f64], y: &mut [f64]) {
        let s = self.mean_bone_length(x).max(MIN_SCALE);
        let f = self.pixels_per_bone / s;
        let (rx, ry) = (x[3 * self.root], x[3 * self.root + 1]);
        for (k, out) in y.chunks_exact_mut(2).enumerate() {
            out[0] = self.center[0] + f * (x[3 * k] - rx);
            out[1] = self.center[1] - f * (x[3 * k + 1] - ry);
        }
    }

    fn backward_row(&self, x: &[f64], gy: &[f64], gx: &mut [f64]) {
        let raw = self.mean_bone_length(x);
        let s = raw.max(MIN_SCALE);
        let px = self.pixels_per_bone;
        let (rx, ry) = (x[3 * self.root], x[3 * self.root + 1]);
        let (mut sum_x, mut sum_y, mut gs) = (0.0, 0.0, 0.0);
        for (k, g) in gy.chunks_exact(2).enumerate() {
            let (qx, qy) = (x[3 * k] - rx, x[3 * k + 1] - ry);
            let gqx = g[0] * px / s;
            let gqy = -g[1] * px / s;
            gx[3 * k] += gqx;
            gx[3 * k + 1] += gqy;
            sum_x += gqx;
            sum_y += gqy;
            gs -= px / (s * s) * (g[0] * qx - g[1] * qy);
        }
        gx[3 * self.root] -= sum_x;
        gx[3 * self.root + 1] -= sum_y;
        if raw < MIN_SCALE {
            return;
        }
        let m = self.bones.len() as f64;
        for &(p, c) in &self.bones {
            let d = [x[3 * c] - x[3 * p], x[3 * c + 1] - x[3 * p + 1]];
            let len = d[0].hypot(d[1]);
            if len == 0.0 {
                continue;
            }
            for ax in 0..2 {
                let v = gs * d[ax] / (len * m);
                gx[3 * c + ax] += v;
                gx[3 * p + ax] -= v;
            }
        }
    }
}

pub fn orthographic_project(pose: &Pose3D, projection: &OrthoProjection) -> Pose2D {
    projection.project(pose)
}

/// Masked 2D loss and whether every joint was invisible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss2d {
    pub value: f64,
    pub all_invisible: bool,
}

/// Mean squared pixel error between the projection of `pred` and the
/// visible joints of `target`.
pub fn loss_2d(pred: &[Pose3D], target: &[Pose2D], projection: &OrthoProjection) -> Result<Loss2d> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "batch {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(target) {
        if p.num_joints() != t.num_joints() || t.visibility.len() != t.num_joints() {
            return Err(Error::ShapeMismatch(format!(
                "{} joints vs {}",
                p.num_joints(),
                t.num_joints()
            )));
        }
        let proj = projection.project(p);
        for ((a, b), &vis) in proj.coords.iter().zip(&t.coords).zip(&t.visibility) {
            if vis {
                sum += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                n += 2;
            }
        }
    }
    Ok(if n == 0 {
        Loss2d {
            value: 0.0,
            all_invisible: true,
        }
    } else {
        Loss2d {
            value: sum / n as f64,
            all_invisible: false,
        }
    })
}

/// Individual terms of the overall objective; absent terms contribute 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l3d: Option<f64>,
    pub lmv: Option<f64>,
    pub l2d: Option<f64>,
    pub lgen: Option<f64>,
}

/// `l3d + w1·lmv + w2·l2d + w3·lgen`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    let named = [
        ("l3d", c.l3d),
        ("lmv", c.lmv),
        ("l2d", c.l2d),
        ("lgen", c.lgen),
    ];
    for (name, v) in named {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
    }
    Ok(c.l3d.unwrap_or(0.0)
        + w.w1 * c.lmv.unwrap_or(0.0)
        + w.w2 * c.l2d.unwrap_or(0.0)
        + w.w3 * c.lgen.unwrap_or(0.0))
}

/// Applies `rotation` to every joint of an `N × 3K` pose matrix.
pub fn rotate_poses(g: &mut Graph, poses: Var, rotation: &CameraRotation) -> Result<Var> {
    let (n, w) = g.value(poses).dims2()?;
    let joints = g.reshape(poses, &[n * w / 3, 3])?;
    let rt = g.constant(Tensor::from_rows(
        3,
        3,
        row_major(&rotation.matrix().transpose()),
    )?);
    let rotated = g.matmul(joints, rt)?;
    g.reshape(rotated, &[n, w])
}

fn row_major(m: &Matrix3<f64>) -> Vec<f64> {
    (0..3)
        .flat_map(|i| (0..3).map(move |j| m[(i, j)]))
        .collect()
}

/// Masked mean squared error between `Orth(poses)` (an `N × 3K` matrix) and
/// the `N × 2K` pixel targets; entries with a zero mask are ignored.
pub fn graph_loss_2d(
    g: &mut Graph,
    poses: Var,
    targets: &[f64],
    mask: &[f64],
    projection: &Arc<OrthoProjection>,
) -> Result<Var> {
    let proj = g.row_map(poses, projection.clone())?;
    let shape = g.value(proj).shape.clone();
    let t = g.constant(Tensor::new(shape.clone(), targets.to_vec())?);
    let m = g.constant(Tensor::new(shape, mask.to_vec())?);
    let d = g.sub(proj, t)?;
    let dm = g.mul(d, m)?;
    let sq = g.square(dm);
    let s = g.sum(sq);
    let count = mask.iter().filter(|&&v| v != 0.0).count().max(1);
    Ok(g.scale(s, 1.0 / count as f64))
}
