//! Synthetic walking motion, multi-view pairs and the JSON Lines dataset
//! format.
//!
//! The generator drives the 17-joint skeleton of [`SkeletonTopology::h36m`]
//! with a sinusoidal gait: hips, knees, shoulders and elbows oscillate with
//! the left side half a cycle behind the right, the pelvis twists, the torso
//! sways, and the root bobs while moving forward. Everything is a function
//! of the gait phase `φ(t) = φ₀ + 2π·speed·t / period`, so doubling the speed
//! doubles every joint velocity at the same phase.
//!
//! Coordinates are millimeters with `y` up and `z` toward the camera.
//!
//! A dataset file holds one or more sequences. Each starts with a header
//! line `{"schema":"postcn-v1","topology":…,"spec":…,"cameras":[…]}`
//! followed by one line per frame `{"t":…,"j3d":…,"j2d":…,"vis":…}`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::{sample_pose_rotation, CameraRotation, OrthoProjection};
use crate::rng::{purpose, substream};
use crate::skeleton::{Pose2D, Pose3D, PoseSequence2D, PoseSequence3D, SkeletonTopology};

pub const SCHEMA: &str = "postcn-v1";

/// Bone lengths of the reference subject, in topology bone order.
pub const DEFAULT_BONE_LENGTHS: [f64; 16] = [
    130.0, 450.0, 450.0, 130.0, 450.0, 450.0, 230.0, 250.0, 110.0, 115.0, 150.0, 280.0, 250.0,
    150.0, 280.0, 250.0,
];

/// Oscillation amplitudes, radians unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitAmplitudes {
    pub hip: f64,
    pub knee: f64,
    pub shoulder: f64,
    pub elbow: f64,
    pub pelvis_twist: f64,
    pub torso_sway: f64,
    /// Vertical root oscillation, mm.
    pub bob: f64,
}

impl Default for GaitAmplitudes {
    fn default() -> Self {
        Self {
            hip: 0.45,
            knee: 0.9,
            shoulder: 0.35,
            elbow: 0.4,
            pelvis_twist: 0.12,
            torso_sway: 0.05,
            bob: 25.0,
        }
    }
}

impl GaitAmplitudes {
    pub fn still() -> Self {
        Self {
            hip: 0.0,
            knee: 0.0,
            shoulder: 0.0,
            elbow: 0.0,
            pelvis_twist: 0.0,
            torso_sway: 0.0,
            bob: 0.0,
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            hip: self.hip * s,
            knee: self.knee * s,
            shoulder: self.shoulder * s,
            elbow: self.elbow * s,
            pelvis_twist: self.pelvis_twist * s,
            torso_sway: self.torso_sway * s,
            bob: self.bob * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSpec {
    pub frames: usize,
    pub speed_multiplier: f64,
    /// One length per bone, mm.
    pub bone_lengths: Vec<f64>,
    pub gait: GaitAmplitudes,
    /// Frames per gait cycle at speed 1.
    pub period: f64,
    /// Phase at frame 0, radians.
    pub phase: f64,
    /// Facing direction about the vertical axis, radians.
    pub heading: f64,
    /// Forward root travel per gait cycle, mm.
    pub stride_length: f64,
    /// Std of i.i.d. Gaussian noise added to every coordinate, mm.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            frames: 128,
            speed_multiplier: 1.0,
            bone_lengths: DEFAULT_BONE_LENGTHS.to_vec(),
            gait: GaitAmplitudes::default(),
            period: 40.0,
            phase: 0.0,
            heading: 0.0,
            stride_length: 1400.0,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl MotionSpec {
    pub fn validate(self) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        if !(self.speed_multiplier > 0.0 && self.speed_multiplier.is_finite()) {
            return bad(format!(
                "speed_multiplier must be positive, got {}",
                self.speed_multiplier
            ));
        }
        if self.bone_lengths.len() != DEFAULT_BONE_LENGTHS.len() {
            return bad(format!(
                "expected {} bone lengths, got {}",
                DEFAULT_BONE_LENGTHS.len(),
                self.bone_lengths.len()
            ));
        }
        if self
            .bone_lengths
            .iter()
            .any(|&l| !(l > 0.0 && l.is_finite()))
        {
            return bad("bone lengths must be positive".into());
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return bad(format!("period must be positive, got {}", self.period));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            ));
        }
        let g = &self.gait;
        let amps = [
            g.hip,
            g.knee,
            g.shoulder,
            g.elbow,
            g.pelvis_twist,
            g.torso_sway,
            g.bob,
        ];
        if amps
            .iter()
            .chain([&self.phase, &self.heading, &self.stride_length])
            .any(|v| !v.is_finite())
        {
            return bad("gait parameters must be finite".into());
        }
        Ok(self)
    }

    /// Gait phase at (possibly fractional) frame `t`.
    pub fn phase_at(&self, t: f64) -> f64 {
        self.phase + 2.0 * PI * self.speed_multiplier * t / self.period
    }

    /// Noise-free pose at phase `phi`, including root travel.
    pub fn pose_at_phase(&self, phi: f64) -> Pose3D {
        let g = &self.gait;
        let sagittal = |angle: f64| Vector3::new(0.0, -angle.cos(), angle.sin());
        let yrot =
            |angle: f64, v: Vector3<f64>| Rotation3::from_axis_angle(&Vector3::y_axis(), angle) * v;

        let twist = g.pelvis_twist * phi.sin();
        let leg = |p: f64| {
            let hip = g.hip * p.sin();
            let knee = g.knee * (1.0 - (p + 0.5).cos()) / 2.0;
            (sagittal(hip), sagittal(hip - knee))
        };
        let arm = |p: f64, side: f64| {
            // arms swing against the leg on the same side
            let swing = -g.shoulder * p.sin();
            let bend = 0.3 + g.elbow * (1.0 + p.sin()) / 2.0;
            let upper = (sagittal(swing) + Vector3::new(0.1 * side, 0.0, 0.0)).normalize();
            (upper, sagittal(swing + bend))
        };
        let (r_thigh, r_shank) = leg(phi);
        let (l_thigh, l_shank) = leg(phi + PI);
        let (r_upper, r_fore) = arm(phi, -1.0);
        let (l_upper, l_fore) = arm(phi + PI, 1.0);
        let spine = Vector3::new(g.torso_sway * phi.sin(), 1.0, 0.08).normalize();
        let head = Vector3::new(0.0, 1.0, 0.15).normalize();

        let dirs: [Vector3<f64>; 16] = [
            yrot(twist, -Vector3::x()),
            r_thigh,
            r_shank,
            yrot(twist, Vector3::x()),
            l_thigh,
            l_shank,
            spine,
            spine,
            spine,
            head,
            yrot(-1.5 * twist, Vector3::x()),
            l_upper,
            l_fore,
            yrot(-1.5 * twist, -Vector3::x()),
            r_upper,
            r_fore,
        ];

        let heading = Rotation3::from_axis_angle(&Vector3::y_axis(), self.heading);
        let travel = self.stride_length * phi / (2.0 * PI);
        let root = heading * Vector3::new(0.0, g.bob * (2.0 * phi).cos(), travel);
        let topo = SkeletonTopology::h36m();
        let mut coords = vec![[0.0; 3]; topo.num_joints()];
        coords[topo.root_index] = root.into();
        for b in topo.bones_root_first() {
            let (p, c) = topo.bones[b];
            let v = heading * dirs[b] * self.bone_lengths[b];
            coords[c] = (Vector3::from(coords[p]) + v).into();
        }
        Pose3D::new(coords)
    }

    /// Noise-free pose at (possibly fractional) frame `t`.
    pub fn pose_at(&self, t: f64) -> Pose3D {
        self.pose_at_phase(self.phase_at(t))
    }
}

/// Generates `spec.frames` frames. The root moves; use
/// [`Pose3D::root_centered`] for root-relative data.
pub fn generate_sequence(spec: &MotionSpec) -> Result<PoseSequence3D> {
    let spec = spec.clone().validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise =
        Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let frames = (0..spec.frames)
        .map(|t| {
            let mut pose = spec.pose_at(t as f64);
            if spec.noise_std > 0.0 {
                for c in &mut pose.coords {
                    for v in c.iter_mut() {
                        *v += noise.sample(&mut rng);
                    }
                }
            }
            pose
        })
        .collect();
    Ok(PoseSequence3D::new(frames))
}

/// Returns the sequence and its image under `rotation`.
pub fn make_multiview(
    seq: &PoseSequence3D,
    rotation: &CameraRotation,
) -> (PoseSequence3D, PoseSequence3D) {
    (seq.clone(), seq.transformed(rotation.matrix()))
}

/// Orthographic projection of every frame; all joints visible.
pub fn project_to_2d(seq: &PoseSequence3D, projection: &OrthoProjection) -> PoseSequence2D {
    PoseSequence2D::new(seq.frames.iter().map(|p| projection.project(p)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: usize,
    pub j3d: Vec<[f64; 3]>,
    pub j2d: Vec<[f64; 2]>,
    pub vis: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    topology: SkeletonTopology,
    spec: Value,
    #[serde(default)]
    cameras: Vec<CameraRotation>,
}

/// One sequence of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub topology: SkeletonTopology,
    /// Generator settings, or any JSON describing where the data came from.
    pub spec: Value,
    /// Rotations taking this view to additional views of the same motion.
    pub cameras: Vec<CameraRotation>,
    pub frames: Vec<FrameRecord>,
}

impl SequenceRecord {
    pub fn from_poses(
        topology: SkeletonTopology,
        spec: Value,
        cameras: Vec<CameraRotation>,
        poses3d: &PoseSequence3D,
        poses2d: &PoseSequence2D,
    ) -> Result<Self> {
        if poses3d.len() != poses2d.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} 3D frames vs {} 2D",
                poses3d.len(),
                poses2d.len()
            )));
        }
        let frames = poses3d
            .frames
            .iter()
            .zip(&poses2d.frames)
            .enumerate()
            .map(|(t, (p3, p2))| FrameRecord {
                t,
                j3d: p3.coords.clone(),
                j2d: p2.coords.clone(),
                vis: p2.visibility.clone(),
            })
            .collect();
        Ok(Self {
            topology,
            spec,
            cameras,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses3d(&self) -> PoseSequence3D {
        PoseSequence3D::new(
            self.frames
                .iter()
                .map(|f| Pose3D::new(f.j3d.clone()))
                .collect(),
        )
    }

    pub fn poses2d(&self) -> PoseSequence2D {
        PoseSequence2D::new(
            self.frames
                .iter()
                .map(|f| Pose2D {
                    coords: f.j2d.clone(),
                    visibility: f.vis.clone(),
                })
                .collect(),
        )
    }
}

/// Settings for a whole synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub sequences: usize,
    pub frames: usize,
    /// Sequence `i` uses `speeds[i % speeds.len()]`.
    pub speeds: Vec<f64>,
    /// Relative spread of the overall subject size.
    pub subject_scale_jitter: f64,
    /// Relative spread of individual bone lengths on top of the subject size.
    pub bone_jitter: f64,
    /// Relative spread of gait amplitudes.
    pub amplitude_jitter: f64,
    /// Headings are drawn uniformly from `[-heading_range, heading_range]`.
    pub heading_range: f64,
    /// Fraction of sequences that carry a second camera view.
    pub multiview_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            sequences: 200,
            frames: 128,
            speeds: vec![0.5, 1.0, 2.0],
            subject_scale_jitter: 0.06,
            bone_jitter: 0.03,
            amplitude_jitter: 0.2,
            heading_range: PI / 3.0,
            multiview_fraction: 0.25,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, spread: f64) -> f64 {
    if spread > 0.0 {
        1.0 + rng.random_range(-spread..=spread)
    } else {
        1.0
    }
}

impl CorpusSpec {
    pub fn validate(self) -> Result<Self> {
        if self.speeds.is_empty() || self.speeds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(
                "speeds must be a nonempty list of positive values".into(),
            ));
        }
        for (name, v) in [
            ("subject_scale_jitter", self.subject_scale_jitter),
            ("bone_jitter", self.bone_jitter),
            ("amplitude_jitter", self.amplitude_jitter),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.multiview_fraction) {
            return Err(Error::InvalidConfig(format!(
                "multiview_fraction must lie in [0, 1], got {}",
                self.multiview_fraction
            )));
        }
        if !(self.heading_range >= 0.0 && self.heading_range.is_finite()) {
            return Err(Error::InvalidConfig(
                "heading_range must be nonnegative".into(),
            ));
        }
        Ok(self)
    }

    /// Motion settings and extra camera views of sequence `index`.
    pub fn sample(&self, index: usize) -> (MotionSpec, Vec<CameraRotation>) {
        let mut rng = substream(self.seed, purpose::DATA, 0, index as u32);
        let scale = jitter(&mut rng, self.subject_scale_jitter);
        let bone_lengths = DEFAULT_BONE_LENGTHS
            .iter()
            .map(|l| l * scale * jitter(&mut rng, self.bone_jitter))
            .collect();
        let gait = GaitAmplitudes::default().scaled(jitter(&mut rng, self.amplitude_jitter));
        let heading = if self.heading_range > 0.0 {
            rng.random_range(-self.heading_range..=self.heading_range)
        } else {
            0.0
        };
        let spec = MotionSpec {
            frames: self.frames,
            speed_multiplier: self.speeds[index % self.speeds.len()],
            bone_lengths,
            gait,
            phase: rng.random_range(0.0..2.0 * PI),
            heading,
            stride_length: MotionSpec::default().stride_length * scale,
            noise_std: self.noise_std,
            seed: rng.random(),
            ..MotionSpec::default()
        };
        let cameras = if rng.random_bool(self.multiview_fraction) {
            vec![sample_pose_rotation(&mut rng)]
        } else {
            Vec::new()
        };
        (spec, cameras)
    }
}

/// Builds a root-centered record from a motion spec.
pub fn synthesize_record(
    spec: &MotionSpec,
    cameras: Vec<CameraRotation>,
) -> Result<SequenceRecord> {
    let topology = SkeletonTopology::h36m();
    let seq = generate_sequence(spec)?;
    let centered = PoseSequence3D::new(
        seq.frames
            .iter()
            .map(|p| p.root_centered(topology.root_index))
            .collect(),
    );
    let projection = OrthoProjection::for_topology(&topology);
    let poses2d = project_to_2d(&centered, &projection);
    SequenceRecord::from_poses(
        topology,
        serde_json::to_value(spec)?,
        cameras,
        &centered,
        &poses2d,
    )
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<SequenceRecord>> {
    let spec = spec.clone().validate()?;
    (0..spec.sequences)
        .map(|i| {
            let (motion, cameras) = spec.sample(i);
            synthesize_record(&motion, cameras)
        })
        .collect()
}

pub fn write_dataset<W: Write>(mut out: W, records: &[SequenceRecord]) -> Result<()> {
    for r in records {
        let header = Header {
            schema: SCHEMA.to_string(),
            topology: r.topology.clone(),
            spec: r.spec.clone(),
            cameras: r.cameras.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for f in &r.frames {
            serde_json::to_writer(&mut out, f)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn check_frame(frame: &FrameRecord, k: usize, line: usize) -> Result<()> {
    let schema = |msg: String| Err(Error::Schema { line, msg });
    if frame.j3d.len() != k || frame.j2d.len() != k || frame.vis.len() != k {
        return schema(format!(
            "topology has {k} joints but frame has j3d {}, j2d {}, vis {}",
            frame.j3d.len(),
            frame.j2d.len(),
            frame.vis.len()
        ));
    }
    let finite = frame
        .j3d
        .iter()
        .flatten()
        .chain(frame.j2d.iter().flatten())
        .all(|v| v.is_finite());
    if !finite {
        return schema("non-finite coordinate".into());
    }
    Ok(())
}

/// Reads every sequence from a dataset stream. Line numbers in errors are
/// 1-based.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<SequenceRecord>> {
    let mut records: Vec<SequenceRecord> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n,
            msg: e.to_string(),
        })?;
        let schema_err = |e: serde_json::Error| Error::Schema {
            line: n,
            msg: e.to_string(),
        };
        if value.get("schema").is_some() {
            let header: Header = serde_json::from_value(value).map_err(schema_err)?;
            if header.schema != SCHEMA {
                return Err(Error::Schema {
                    line: n,
                    msg: format!("unsupported schema {:?}", header.schema),
                });
            }
            let topology = header.topology.validate().map_err(|e| Error::Schema {
                line: n,
                msg: e.to_string(),
            })?;
            records.push(SequenceRecord {
                topology,
                spec: header.spec,
                cameras: header.cameras,
                frames: Vec::new(),
            });
        } else {
            let Some(current) = records.last_mut() else {
                return Err(Error::Schema {
                    line: n,
                    msg: "frame before any header".into(),
                });
            };
            let frame: FrameRecord = serde_json::from_value(value).map_err(schema_err)?;
            check_frame(&frame, current.topology.num_joints(), n)?;
            current.frames.push(frame);
        }
    }
    Ok(records)
}

pub fn write_dataset_file(path: &std::path::Path, records: &[SequenceRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(file), records)
}

pub fn read_dataset_file(path: &std::path::Path) -> Result<Vec<SequenceRecord>> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))
}
