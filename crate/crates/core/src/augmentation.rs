//! Occlusion and noise augmentation for heatmap sequences.
//!
//! Pose-space stages (keypoint shift, symmetric swap) act on 2D poses before
//! rendering; the remaining stages act on rendered heatmaps and only ever
//! zero whole channels, except for the final additive noise.
//!
//! [`apply_pipeline`] runs every stage in a fixed order:
//! shift → swap → render → area → point → frame → noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{render_sequence, HeatmapSequence, DEFAULT_RESOLUTION, DEFAULT_SIGMA};
use crate::rng::{purpose, substream};
use crate::skeleton::{PoseSequence2D, SkeletonTopology};

/// Sampling ranges for virtual rectangular occluders, in pixels and frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaOccluderConfig {
    /// Occluders per sequence.
    pub count: usize,
    pub width: [f64; 2],
    pub height: [f64; 2],
    /// How many consecutive frames an occluder stays in place.
    pub lifetime: [usize; 2],
}

impl Default for AreaOccluderConfig {
    fn default() -> Self {
        Self {
            count: 1,
            width: [6.4, 25.6],
            height: [6.4, 25.6],
            lifetime: [8, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub frame_occlusion_rate: f64,
    pub point_occlusion_rate: f64,
    pub area_occluder: AreaOccluderConfig,
    /// Uniform noise in `[0, noise_amplitude]` added to visible channels.
    pub noise_amplitude: f64,
    /// Largest per-axis keypoint displacement in pixels.
    pub shift_max: u32,
    /// Chance that a given joint in a given frame is shifted.
    pub shift_probability: f64,
    pub swap_probability: f64,
    /// Mask this many frames at the end of every sequence. A nonzero value
    /// turns estimation into forecasting of the unseen tail.
    pub frame_occlusion_tail: usize,
    pub sigma: f64,
    pub resolution: [usize; 2],
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            frame_occlusion_rate: 0.05,
            point_occlusion_rate: 0.1,
            area_occluder: AreaOccluderConfig::default(),
            noise_amplitude: 0.0,
            shift_max: 2,
            shift_probability: 0.05,
            swap_probability: 0.02,
            frame_occlusion_tail: 0,
            sigma: DEFAULT_SIGMA,
            resolution: [DEFAULT_RESOLUTION.0, DEFAULT_RESOLUTION.1],
            seed: 0,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must lie in [0, 1], got {p}"
        )))
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} range {r:?} is not an ordered nonnegative pair"
        )))
    }
}

impl AugmentationConfig {
    /// No augmentation at all: the pipeline reduces to plain rendering.
    pub fn disabled() -> Self {
        Self {
            frame_occlusion_rate: 0.0,
            point_occlusion_rate: 0.0,
            area_occluder: AreaOccluderConfig {
                count: 0,
                ..AreaOccluderConfig::default()
            },
            noise_amplitude: 0.0,
            shift_max: 0,
            shift_probability: 0.0,
            swap_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(self) -> Result<Self> {
        check_probability("frame_occlusion_rate", self.frame_occlusion_rate)?;
        check_probability("point_occlusion_rate", self.point_occlusion_rate)?;
        check_probability("shift_probability", self.shift_probability)?;
        check_probability("swap_probability", self.swap_probability)?;
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_amplitude must be nonnegative, got {}",
                self.noise_amplitude
            )));
        }
        check_range("area_occluder.width", self.area_occluder.width)?;
        check_range("area_occluder.height", self.area_occluder.height)?;
        let [lo, hi] = self.area_occluder.lifetime;
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "area_occluder.lifetime {lo} > {hi}"
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::NonPositiveSigma(self.sigma));
        }
        if self.resolution.contains(&0) {
            return Err(Error::InvalidConfig("resolution must be positive".into()));
        }
        Ok(self)
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.resolution[0], self.resolution[1])
    }
}

/// Axis-aligned occluder active on frames `start..end`. A pixel `(row, col)`
/// is covered when `x0 ≤ col < x1` and `y0 ≤ row < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub start: usize,
    pub end: usize,
}

impl Occluder {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (r, c) = (row as f64, col as f64);
        self.x0 <= c && c < self.x1 && self.y0 <= r && r < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    pub frame: usize,
    pub joint: usize,
    pub dx: i32,
    pub dy: i32,
}

/// Everything the pipeline did to a sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    /// Frames with every channel zeroed.
    pub frames: Vec<usize>,
    /// `(frame, joint)` channels zeroed by point occlusion.
    pub points: Vec<(usize, usize)>,
    /// `(frame, joint)` channels zeroed by an area occluder.
    pub area: Vec<(usize, usize)>,
    pub occluders: Vec<Occluder>,
    pub shifts: Vec<Shift>,
    /// `(frame, symmetry pair index)`.
    pub swaps: Vec<(usize, usize)>,
}

impl MaskRecord {
    pub fn merge(&mut self, other: MaskRecord) {
        self.frames.extend(other.frames);
        self.points.extend(other.points);
        self.area.extend(other.area);
        self.occluders.extend(other.occluders);
        self.shifts.extend(other.shifts);
        self.swaps.extend(other.swaps);
    }
}

fn zero_frame(seq: &mut HeatmapSequence, t: usize) {
    seq.frame_mut(t).fill(0.0);
}

/// Zeroes every channel of each frame independently with probability `rate`.
pub fn occlude_frames<R: Rng + ?Sized>(
    seq: &mut HeatmapSequence,
    rate: f64,
    rng: &mut R,
) -> MaskRecord {
    let mut record = MaskRecord::default();
    for t in 0..seq.frames {
        if rng.random_bool(rate) {
            zero_frame(seq, t);
            record.frames.push(t);
        }
    }
    record
}

/// Zeroes the last `count` frames.
pub fn occlude_tail(seq: &mut HeatmapSequence, count: usize) -> MaskRecord {
    let mut record = MaskRecord::default();
    for t in seq.frames.saturating_sub(count)..seq.frames {
        zero_frame(seq, t);
        record.frames.push(t);
    }
    record
}

/// Zeroes each `(frame, joint)` channel independently with probability `rate`.
pub fn occlude_keypoints<R: Rng + ?Sized>(
    seq: &mut HeatmapSequence,
    rate: f64,
    rng: &mut R,
) -> MaskRecord {
    let mut record = MaskRecord::default();
    for t in 0..seq.frames {
        for k in 0..seq.joints {
            if rng.random_bool(rate) {
                seq.channel_mut(t, k).fill(0.0);
                record.points.push((t, k));
            }
        }
    }
    record
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws one occluder that fits inside an `h×w` frame of a `frames`-long
/// sequence.
pub fn sample_occluder<R: Rng + ?Sized>(
    spec: &AreaOccluderConfig,
    frames: usize,
    (h, w): (usize, usize),
    rng: &mut R,
) -> Occluder {
    let ow = uniform(rng, spec.width).min(w as f64);
    let oh = uniform(rng, spec.height).min(h as f64);
    let x0 = uniform(rng, [0.0, w as f64 - ow]);
    let y0 = uniform(rng, [0.0, h as f64 - oh]);
    let life = rng
        .random_range(spec.lifetime[0]..=spec.lifetime[1])
        .min(frames);
    let start = rng.random_range(0..=frames - life);
    Occluder {
        x0,
        y0,
        x1: x0 + ow,
        y1: y0 + oh,
        start,
        end: start + life,
    }
}

fn argmax(channel: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in channel.iter().enumerate() {
        if v > channel[best] {
            best = i;
        }
    }
    best
}

/// Zeroes every channel whose peak pixel falls inside `occluder` during its
/// lifetime. Channels that are already zero are left alone.
pub fn apply_occluder(seq: &mut HeatmapSequence, occluder: &Occluder) -> MaskRecord {
    let mut record = MaskRecord::default();
    for t in occluder.start..occluder.end.min(seq.frames) {
        for k in 0..seq.joints {
            if seq.channel_is_zero(t, k) {
                continue;
            }
            let peak = argmax(seq.channel(t, k));
            if occluder.contains(peak / seq.width, peak % seq.width) {
                seq.channel_mut(t, k).fill(0.0);
                record.area.push((t, k));
            }
        }
    }
    record.occluders.push(*occluder);
    record
}

pub fn occlude_area<R: Rng + ?Sized>(
    seq: &mut HeatmapSequence,
    spec: &AreaOccluderConfig,
    rng: &mut R,
) -> MaskRecord {
    let mut record = MaskRecord::default();
    if seq.frames == 0 {
        return record;
    }
    for _ in 0..spec.count {
        let occ = sample_occluder(spec, seq.frames, (seq.height, seq.width), rng);
        record.merge(apply_occluder(seq, &occ));
    }
    record
}

/// Adds uniform noise in `[0, amplitude]` to every pixel of every nonzero
/// channel, then clamps to `[0, 1]`.
pub fn perturb_noise<R: Rng + ?Sized>(seq: &mut HeatmapSequence, amplitude: f64, rng: &mut R) {
    if amplitude == 0.0 {
        return;
    }
    for t in 0..seq.frames {
        for k in 0..seq.joints {
            if seq.channel_is_zero(t, k) {
                continue;
            }
            // two 32-bit uniforms per draw
            let scale = amplitude / (1u64 << 32) as f64;
            for pair in seq.channel_mut(t, k).chunks_mut(2) {
                let bits = rng.next_u64();
                let draws = [bits & 0xffff_ffff, bits >> 32];
                for (v, d) in pair.iter_mut().zip(draws) {
                    *v = (*v + d as f64 * scale).clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Moves each joint with probability `probability` by an integer offset
/// drawn uniformly from `[-shift_max, shift_max]²`.
pub fn shift_keypoints<R: Rng + ?Sized>(
    poses: &mut PoseSequence2D,
    shift_max: u32,
    probability: f64,
    rng: &mut R,
) -> MaskRecord {
    let mut record = MaskRecord::default();
    if shift_max == 0 || probability == 0.0 {
        return record;
    }
    let m = shift_max as i32;
    for (t, pose) in poses.frames.iter_mut().enumerate() {
        for (k, c) in pose.coords.iter_mut().enumerate() {
            if rng.random_bool(probability) {
                let dx = rng.random_range(-m..=m);
                let dy = rng.random_range(-m..=m);
                c[0] += f64::from(dx);
                c[1] += f64::from(dy);
                record.shifts.push(Shift {
                    frame: t,
                    joint: k,
                    dx,
                    dy,
                });
            }
        }
    }
    record
}

/// Exchanges the two joints of symmetry pair `pair` in frame `t`.
pub fn swap_pair(poses: &mut PoseSequence2D, t: usize, (l, r): (usize, usize)) {
    let pose = &mut poses.frames[t];
    pose.coords.swap(l, r);
    pose.visibility.swap(l, r);
}

/// With probability `probability` per frame, swaps one uniformly chosen
/// symmetry pair.
pub fn swap_symmetric<R: Rng + ?Sized>(
    poses: &mut PoseSequence2D,
    probability: f64,
    topology: &SkeletonTopology,
    rng: &mut R,
) -> MaskRecord {
    let mut record = MaskRecord::default();
    let pairs = &topology.symmetry_pairs;
    if pairs.is_empty() || probability == 0.0 {
        return record;
    }
    for t in 0..poses.len() {
        if rng.random_bool(probability) {
            let i = rng.random_range(0..pairs.len());
            swap_pair(poses, t, pairs[i]);
            record.swaps.push((t, i));
        }
    }
    record
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub heatmaps: HeatmapSequence,
    /// The 2D poses after shifting and swapping, as rendered.
    pub poses: PoseSequence2D,
    pub mask: MaskRecord,
}

/// Runs every stage with an explicit random stream.
pub fn apply_pipeline_with<R: Rng + ?Sized>(
    config: &AugmentationConfig,
    poses: &PoseSequence2D,
    topology: &SkeletonTopology,
    rng: &mut R,
) -> Result<Augmented> {
    let config = config.clone().validate()?;
    let mut poses = poses.clone();
    let mut mask = shift_keypoints(&mut poses, config.shift_max, config.shift_probability, rng);
    mask.merge(swap_symmetric(
        &mut poses,
        config.swap_probability,
        topology,
        rng,
    ));
    let mut heatmaps = render_sequence(&poses, config.sigma, config.resolution())?;
    mask.merge(occlude_area(&mut heatmaps, &config.area_occluder, rng));
    mask.merge(occlude_keypoints(
        &mut heatmaps,
        config.point_occlusion_rate,
        rng,
    ));
    mask.merge(occlude_frames(
        &mut heatmaps,
        config.frame_occlusion_rate,
        rng,
    ));
    if config.frame_occlusion_tail > 0 {
        mask.merge(occlude_tail(&mut heatmaps, config.frame_occlusion_tail));
    }
    perturb_noise(&mut heatmaps, config.noise_amplitude, rng);
    Ok(Augmented {
        heatmaps,
        poses,
        mask,
    })
}

/// Augments sequence number `index` of epoch `epoch`, drawing from the
/// stream `(config.seed, AUGMENT, epoch, index)` (see [`crate::rng`]).
pub fn apply_pipeline(
    config: &AugmentationConfig,
    poses: &PoseSequence2D,
    topology: &SkeletonTopology,
    epoch: u32,
    index: u32,
) -> Result<Augmented> {
    let mut rng = substream(config.seed, purpose::AUGMENT, epoch, index);
    apply_pipeline_with(config, poses, topology, &mut rng)
}
