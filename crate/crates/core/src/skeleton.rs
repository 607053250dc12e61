//! Kinematic model: joints, bones, left/right symmetry, and bone extraction.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint/bone graph of a skeleton.
///
/// Bones are ordered `(parent, child)` pairs and must form a tree rooted at
/// `root` that spans every joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    #[serde(rename = "joints")]
    pub joint_names: Vec<String>,
    pub bones: Vec<(usize, usize)>,
    #[serde(rename = "symmetry")]
    pub symmetry_pairs: Vec<(usize, usize)>,
    #[serde(rename = "root")]
    pub root_index: usize,
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::h36m()
    }
}

const H36M_JOINTS: [&str; 17] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

const H36M_BONES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

const H36M_SYMMETRY: [(usize, usize); 6] = [(4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16)];

impl SkeletonTopology {
    /// The 17-joint Human3.6M layout with the pelvis as root.
    pub fn h36m() -> Self {
        Self {
            joint_names: H36M_JOINTS.iter().map(|s| s.to_string()).collect(),
            bones: H36M_BONES.to_vec(),
            symmetry_pairs: H36M_SYMMETRY.to_vec(),
            root_index: 0,
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn num_bones(&self) -> usize {
        self.bones.len()
    }

    /// Checks every structural invariant and returns the topology unchanged.
    pub fn validate(self) -> Result<Self> {
        let k = self.num_joints();
        let m = self.num_bones();
        for &(p, c) in &self.bones {
            for idx in [p, c] {
                if idx >= k {
                    return Err(Error::JointOutOfRange {
                        index: idx,
                        joints: k,
                    });
                }
            }
            if p == c {
                return Err(Error::CycleDetected(p));
            }
        }
        if self.root_index >= k {
            return Err(Error::JointOutOfRange {
                index: self.root_index,
                joints: k,
            });
        }

        // union-find over undirected edges; a repeated component is a cycle
        let mut uf: Vec<usize> = (0..k).collect();
        fn find(uf: &mut [usize], mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        for &(p, c) in &self.bones {
            let (rp, rc) = (find(&mut uf, p), find(&mut uf, c));
            if rp == rc {
                return Err(Error::CycleDetected(c));
            }
            uf[rp] = rc;
        }
        if m + 1 != k {
            return Err(Error::BoneCountMismatch {
                joints: k,
                bones: m,
            });
        }

        // every joint must be reachable from the root along parent->child edges
        let mut reached = vec![false; k];
        reached[self.root_index] = true;
        let mut stack = vec![self.root_index];
        while let Some(j) = stack.pop() {
            for &(p, c) in &self.bones {
                if p == j && !reached[c] {
                    reached[c] = true;
                    stack.push(c);
                }
            }
        }
        if let Some(j) = reached.iter().position(|r| !r) {
            return Err(Error::DisconnectedJoint(j));
        }

        let mut paired = vec![false; k];
        for &(l, r) in &self.symmetry_pairs {
            if l >= k || r >= k || l == r || paired[l] || paired[r] {
                return Err(Error::BadSymmetryPair(l, r));
            }
            if !is_mirror_pair(&self.joint_names[l], &self.joint_names[r]) {
                return Err(Error::BadSymmetryPair(l, r));
            }
            paired[l] = true;
            paired[r] = true;
        }
        Ok(self)
    }

    /// Parent of every joint (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.num_joints()];
        for &(p, c) in &self.bones {
            parents[c] = Some(p);
        }
        parents
    }

    /// Bone indices ordered so that every bone's parent joint is placed
    /// before its child joint.
    pub fn bones_root_first(&self) -> Vec<usize> {
        let mut placed = vec![false; self.num_joints()];
        placed[self.root_index] = true;
        let mut order = Vec::with_capacity(self.num_bones());
        while order.len() < self.num_bones() {
            let before = order.len();
            for (b, &(p, c)) in self.bones.iter().enumerate() {
                if placed[p] && !placed[c] {
                    placed[c] = true;
                    order.push(b);
                }
            }
            if order.len() == before {
                break;
            }
        }
        order
    }
}

fn is_mirror_pair(left: &str, right: &str) -> bool {
    let strip = |s: &str, long: &str, short: &str| {
        s.strip_prefix(long)
            .or_else(|| s.strip_prefix(short))
            .map(str::to_string)
    };
    match (strip(left, "left_", "l_"), strip(right, "right_", "r_")) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

/// Root-relative 3D joint coordinates in millimeters, one row per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub coords: Vec<[f64; 3]>,
}

impl Pose3D {
    pub fn new(coords: Vec<[f64; 3]>) -> Self {
        Self { coords }
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            coords: vec![[0.0; 3]; k],
        }
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().all(|v| v.is_finite())
    }

    /// Applies `m` to every joint.
    pub fn transformed(&self, m: &Matrix3<f64>) -> Self {
        Self {
            coords: self
                .coords
                .iter()
                .map(|c| {
                    let v = m * Vector3::new(c[0], c[1], c[2]);
                    [v.x, v.y, v.z]
                })
                .collect(),
        }
    }

    pub fn translated(&self, offset: [f64; 3]) -> Self {
        Self {
            coords: self
                .coords
                .iter()
                .map(|c| [c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]])
                .collect(),
        }
    }

    /// Moves `root` to the origin.
    pub fn root_centered(&self, root: usize) -> Self {
        let r = self.coords[root];
        self.translated([-r[0], -r[1], -r[2]])
    }

    /// Flat row-major copy (`K * 3` values).
    pub fn flat(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Self {
            coords: values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        }
    }
}

/// 2D joint coordinates in pixels with per-joint visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl Pose2D {
    pub fn new(coords: Vec<[f64; 2]>) -> Self {
        let visibility = vec![true; coords.len()];
        Self { coords, visibility }
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSequence3D {
    pub frames: Vec<Pose3D>,
}

impl PoseSequence3D {
    pub fn new(frames: Vec<Pose3D>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn transformed(&self, m: &Matrix3<f64>) -> Self {
        Self::new(self.frames.iter().map(|p| p.transformed(m)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSequence2D {
    pub frames: Vec<Pose2D>,
}

impl PoseSequence2D {
    pub fn new(frames: Vec<Pose2D>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Bone vectors as the columns of a 3×M matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneMatrix {
    pub columns: Vec<[f64; 3]>,
}

impl BoneMatrix {
    pub fn num_bones(&self) -> usize {
        self.columns.len()
    }

    pub fn transformed(&self, m: &Matrix3<f64>) -> Self {
        let p = Pose3D::new(self.columns.clone()).transformed(m);
        Self { columns: p.coords }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| [c[0] * s, c[1] * s, c[2] * s])
                .collect(),
        }
    }
}

/// Column `m` is `coords[child_m] - coords[parent_m]`.
pub fn bones_from_pose(pose: &Pose3D, topology: &SkeletonTopology) -> Result<BoneMatrix> {
    if pose.num_joints() != topology.num_joints() {
        return Err(Error::DimensionMismatch {
            expected: topology.num_joints(),
            got: pose.num_joints(),
        });
    }
    if !pose.is_finite() {
        return Err(Error::NonFinite("pose coordinates".into()));
    }
    let columns = topology
        .bones
        .iter()
        .map(|&(p, c)| {
            let (a, b) = (pose.coords[p], pose.coords[c]);
            [b[0] - a[0], b[1] - a[1], b[2] - a[2]]
        })
        .collect();
    Ok(BoneMatrix { columns })
}

pub fn bone_lengths(bones: &BoneMatrix) -> Vec<f64> {
    bones
        .columns
        .iter()
        .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
        .collect()
}

/// Rebuilds joint positions from bone vectors, placing the root at `root_pos`.
pub fn pose_from_bones(
    bones: &BoneMatrix,
    topology: &SkeletonTopology,
    root_pos: [f64; 3],
) -> Pose3D {
    let mut coords = vec![[0.0; 3]; topology.num_joints()];
    coords[topology.root_index] = root_pos;
    for b in topology.bones_root_first() {
        let (p, c) = topology.bones[b];
        let v = bones.columns[b];
        coords[c] = [
            coords[p][0] + v[0],
            coords[p][1] + v[1],
            coords[p][2] + v[2],
        ];
    }
    Pose3D::new(coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, k: usize) -> Pose3D {
        Pose3D::new(
            (0..k)
                .map(|_| {
                    [
                        rng.random_range(-800.0..800.0),
                        rng.random_range(-800.0..800.0),
                        rng.random_range(-800.0..800.0),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn default_topology_is_valid() {
        let t = SkeletonTopology::default().validate().unwrap();
        assert_eq!(t.num_joints(), 17);
        assert_eq!(t.num_bones(), 16);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut t = SkeletonTopology::h36m();
        t.bones[3] = (0, 0);
        assert!(matches!(t.validate(), Err(Error::CycleDetected(0))));
    }

    #[test]
    fn wrong_bone_count() {
        let mut t = SkeletonTopology::h36m();
        t.bones.truncate(15);
        assert!(matches!(
            t.validate(),
            Err(Error::BoneCountMismatch {
                joints: 17,
                bones: 15
            })
        ));
    }

    #[test]
    fn cycle_between_distinct_joints() {
        let mut t = SkeletonTopology::h36m();
        t.bones[15] = (13, 12);
        assert!(matches!(t.validate(), Err(Error::CycleDetected(_))));
    }

    #[test]
    fn reversed_bone_disconnects_subtree() {
        let mut t = SkeletonTopology::h36m();
        t.bones[2] = (3, 2);
        assert!(matches!(t.validate(), Err(Error::DisconnectedJoint(3))));
    }

    #[test]
    fn symmetry_pairs_must_mirror_names() {
        let mut t = SkeletonTopology::h36m();
        t.symmetry_pairs[0] = (1, 4);
        assert!(matches!(t.validate(), Err(Error::BadSymmetryPair(1, 4))));
        let mut t = SkeletonTopology::h36m();
        t.symmetry_pairs[1] = (4, 3);
        assert!(t.validate().is_err());
    }

    #[test]
    fn topology_json_layout() {
        let t = SkeletonTopology::h36m();
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["root"], 0);
        assert_eq!(v["bones"][1], serde_json::json!([1, 2]));
        assert_eq!(v["symmetry"][0], serde_json::json!([4, 1]));
        assert_eq!(v["joints"][10], "head");
        let back: SkeletonTopology = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bone_is_child_minus_parent() {
        let t = SkeletonTopology::h36m();
        let mut pose = Pose3D::zeros(17);
        pose.coords[1] = [100.0, 0.0, 0.0];
        let b = bones_from_pose(&pose, &t).unwrap();
        assert_eq!(b.columns[0], [100.0, 0.0, 0.0]);

        let b = bones_from_pose(&Pose3D::zeros(17), &t).unwrap();
        assert!(b.columns.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn bones_match_per_bone_loop() {
        let t = SkeletonTopology::h36m();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pose = random_pose(&mut rng, 17);
            let b = bones_from_pose(&pose, &t).unwrap();
            for m in 0..t.num_bones() {
                let (p, c) = t.bones[m];
                for a in 0..3 {
                    assert_eq!(b.columns[m][a], pose.coords[c][a] - pose.coords[p][a]);
                }
            }
        }
    }

    #[test]
    fn non_finite_pose_rejected() {
        let t = SkeletonTopology::h36m();
        let mut pose = Pose3D::zeros(17);
        pose.coords[5][1] = f64::NAN;
        assert!(matches!(
            bones_from_pose(&pose, &t),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn lengths() {
        let b = BoneMatrix {
            columns: vec![[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]],
        };
        assert_eq!(bone_lengths(&b), vec![5.0, 0.0]);
    }

    #[test]
    fn forward_kinematics_inverts_bone_extraction() {
        let t = SkeletonTopology::h36m();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = random_pose(&mut rng, 17).root_centered(0);
        let b = bones_from_pose(&pose, &t).unwrap();
        let back = pose_from_bones(&b, &t, [0.0; 3]);
        for (x, y) in back
            .coords
            .iter()
            .flatten()
            .zip(pose.coords.iter().flatten())
        {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
