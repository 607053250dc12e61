//! Kinematic chain space descriptors.
//!
//! The spatial descriptor `Ψ = BᵀB` holds squared bone lengths on its
//! diagonal and inter-bone inner products elsewhere. The temporal descriptor
//! `Φ = Ψ(t+i) − Ψ(t)` records how those quantities change over `i` frames.
//! Per-frame discriminator features concatenate the upper triangles of `Ψ`
//! and `Φ` (diagonal included) with the flattened joint coordinates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::RowOp;
use crate::skeleton::{bones_from_pose, BoneMatrix, PoseSequence3D, SkeletonTopology};

/// `Ψ = BᵀB`, M×M row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKcs {
    pub psi: Vec<f64>,
    pub bones: usize,
}

/// `Φ = Ψ(t+interval) − Ψ(t)`, M×M row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalKcs {
    pub phi: Vec<f64>,
    pub bones: usize,
    pub interval: usize,
}

impl SpatialKcs {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.psi[i * self.bones + j]
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        upper_triangle(&self.psi, self.bones)
    }
}

impl TemporalKcs {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.phi[i * self.bones + j]
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        upper_triangle(&self.phi, self.bones)
    }
}

/// Per-frame discriminator input vectors, each of length `M(M+1) + 3K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscriminatorFeatures {
    pub frames: Vec<Vec<f64>>,
    pub interval: usize,
}

/// Length of one per-frame feature vector.
pub fn feature_len(joints: usize, bones: usize) -> usize {
    bones * (bones + 1) + 3 * joints
}

/// Number of entries in the upper triangle (diagonal included) of an `m`×`m` matrix.
pub fn triangle_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Row-major upper triangle including the diagonal.
pub fn upper_triangle(matrix: &[f64], m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(triangle_len(m));
    for i in 0..m {
        out.extend_from_slice(&matrix[i * m + i..(i + 1) * m]);
    }
    out
}

pub fn spatial_kcs(bones: &BoneMatrix) -> SpatialKcs {
    let m = bones.num_bones();
    let mut psi = vec![0.0; m * m];
    for i in 0..m {
        let a = bones.columns[i];
        for j in i..m {
            let b = bones.columns[j];
            let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            psi[i * m + j] = d;
            psi[j * m + i] = d;
        }
    }
    SpatialKcs { psi, bones: m }
}

pub fn temporal_kcs(
    bones_t: &BoneMatrix,
    bones_next: &BoneMatrix,
    interval: usize,
) -> Result<TemporalKcs> {
    if bones_t.num_bones() != bones_next.num_bones() {
        return Err(Error::DimensionMismatch {
            expected: bones_t.num_bones(),
            got: bones_next.num_bones(),
        });
    }
    let a = spatial_kcs(bones_t);
    let b = spatial_kcs(bones_next);
    Ok(TemporalKcs {
        phi: b.psi.iter().zip(&a.psi).map(|(x, y)| x - y).collect(),
        bones: a.bones,
        interval,
    })
}

/// Per-frame features for a whole sequence.
///
/// Frame `t` pairs with frame `t + interval`; the last `interval` frames
/// reuse the final computable `Φ`.
pub fn sequence_descriptor(
    seq: &PoseSequence3D,
    topology: &SkeletonTopology,
    interval: usize,
) -> Result<DiscriminatorFeatures> {
    if interval == 0 {
        return Err(Error::InvalidConfig(
            "temporal interval must be positive".into(),
        ));
    }
    if seq.len() <= interval {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            needed: interval,
        });
    }
    let spatial: Vec<SpatialKcs> = seq
        .frames
        .iter()
        .map(|p| bones_from_pose(p, topology).map(|b| spatial_kcs(&b)))
        .collect::<Result<_>>()?;
    let m = topology.num_bones();
    let last = seq.len() - 1 - interval;
    let frames = (0..seq.len())
        .map(|t| {
            let s = t.min(last);
            let phi: Vec<f64> = spatial[s + interval]
                .psi
                .iter()
                .zip(&spatial[s].psi)
                .map(|(x, y)| x - y)
                .collect();
            let mut v = spatial[t].upper_triangle();
            v.extend(upper_triangle(&phi, m));
            v.extend(seq.frames[t].flat());
            v
        })
        .collect();
    Ok(DiscriminatorFeatures { frames, interval })
}

/// Differentiable row map from a flattened pose (`3K` values) to the upper
/// triangle of its spatial KCS.
#[derive(Debug, Clone)]
pub struct KcsRowOp {
    bones: Vec<(usize, usize)>,
    joints: usize,
}

impl KcsRowOp {
    pub fn new(topology: &SkeletonTopology) -> Self {
        Self {
            bones: topology.bones.clone(),
            joints: topology.num_joints(),
        }
    }

    fn bone_vectors(&self, x: &[f64]) -> Vec<[f64; 3]> {
        self.bones
            .iter()
            .map(|&(p, c)| {
                [
                    x[3 * c] - x[3 * p],
                    x[3 * c + 1] - x[3 * p + 1],
                    x[3 * c + 2] - x[3 * p + 2],
                ]
            })
            .collect()
    }
}

impl RowOp for KcsRowOp {
    fn output_width(&self, input_width: usize) -> Result<usize> {
        if input_width != 3 * self.joints {
            return Err(Error::DimensionMismatch {
                expected: 3 * self.joints,
                got: input_width,
            });
        }
        Ok(triangle_len(self.bones.len()))
    }

    fn forward_row(&self, x: &[f64], y: &mut [f64]) {
        let b = self.bone_vectors(x);
        let mut k = 0;
        for i in 0..b.len() {
            for j in i..b.len() {
                y[k] = b[i][0] * b[j][0] + b[i][1] * b[j][1] + b[i][2] * b[j][2];
                k += 1;
            }
        }
    }

    fn backward_row(&self, x: &[f64], gy: &[f64], gx: &mut [f64]) {
        let b = self.bone_vectors(x);
        let mut gb = vec![[0.0; 3]; b.len()];
        let mut k = 0;
        for i in 0..b.len() {
            for j in i..b.len() {
                let g = gy[k];
                for ax in 0..3 {
                    gb[i][ax] += g * b[j][ax];
                    gb[j][ax] += g * b[i][ax];
                }
                k += 1;
            }
        }
        for (&(p, c), g) in self.bones.iter().zip(&gb) {
            for ax in 0..3 {
                gx[3 * c + ax] += g[ax];
                gx[3 * p + ax] -= g[ax];
            }
        }
    }
}
