//! Synthetic Gaussian keypoint heatmaps and peak extraction.
//!
//! Pixel `(row, col)` of channel `k` holds
//! `exp(-((col - u_k)² + (row - v_k)²) / (2σ²))`, where `(u_k, v_k)` is the
//! joint's pixel coordinate. Invisible joints render as all-zero channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, PoseSequence2D};

pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_RESOLUTION: (usize, usize) = (64, 64);

/// K channels of H×W maps for a single frame, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub maps: Vec<f64>,
}

impl HeatmapStack {
    pub fn zeros(joints: usize, (height, width): (usize, usize)) -> Self {
        Self {
            joints,
            height,
            width,
            maps: vec![0.0; joints * height * width],
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.maps[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.maps[k * n..(k + 1) * n]
    }
}

/// A contiguous run of heatmap frames (frame-major, then channel, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSequence {
    pub frames: usize,
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl HeatmapSequence {
    pub fn zeros(frames: usize, joints: usize, (height, width): (usize, usize)) -> Self {
        Self {
            frames,
            joints,
            height,
            width,
            data: vec![0.0; frames * joints * height * width],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.joints * self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn channel(&self, t: usize, k: usize) -> &[f64] {
        let n = self.height * self.width;
        let start = t * self.frame_len() + k * n;
        &self.data[start..start + n]
    }

    pub fn channel_mut(&mut self, t: usize, k: usize) -> &mut [f64] {
        let n = self.height * self.width;
        let start = t * self.frame_len() + k * n;
        &mut self.data[start..start + n]
    }

    pub fn stack(&self, t: usize) -> HeatmapStack {
        HeatmapStack {
            joints: self.joints,
            height: self.height,
            width: self.width,
            maps: self.frame(t).to_vec(),
        }
    }

    /// Copies frames `start..start + len` into a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let n = self.frame_len();
        Self {
            frames: len,
            joints: self.joints,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + len) * n].to_vec(),
        }
    }

    pub fn from_stacks(stacks: &[HeatmapStack]) -> Self {
        let first = &stacks[0];
        let mut data = Vec::with_capacity(stacks.len() * first.maps.len());
        for s in stacks {
            data.extend_from_slice(&s.maps);
        }
        Self {
            frames: stacks.len(),
            joints: first.joints,
            height: first.height,
            width: first.width,
            data,
        }
    }

    pub fn channel_is_zero(&self, t: usize, k: usize) -> bool {
        self.channel(t, k).iter().all(|&v| v == 0.0)
    }
}

fn gaussian_profile(center: f64, sigma: f64, n: usize) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    (0..n)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / denom).exp()
        })
        .collect()
}

fn render_into(out: &mut [f64], pose: &Pose2D, sigma: f64, (h, w): (usize, usize)) {
    let n = h * w;
    for (k, (c, &vis)) in pose.coords.iter().zip(&pose.visibility).enumerate() {
        let ch = &mut out[k * n..(k + 1) * n];
        if !vis {
            ch.fill(0.0);
            continue;
        }
        let cols = gaussian_profile(c[0], sigma, w);
        let rows = gaussian_profile(c[1], sigma, h);
        for (r, ry) in rows.iter().enumerate() {
            for (dst, cx) in ch[r * w..(r + 1) * w].iter_mut().zip(&cols) {
                *dst = ry * cx;
            }
        }
    }
}

pub fn render_heatmaps(
    pose: &Pose2D,
    sigma: f64,
    resolution: (usize, usize),
) -> Result<HeatmapStack> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let mut stack = HeatmapStack::zeros(pose.num_joints(), resolution);
    render_into(&mut stack.maps, pose, sigma, resolution);
    Ok(stack)
}

pub fn render_sequence(
    seq: &PoseSequence2D,
    sigma: f64,
    resolution: (usize, usize),
) -> Result<HeatmapSequence> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let k = seq.frames.first().map_or(0, |p| p.num_joints());
    let mut out = HeatmapSequence::zeros(seq.len(), k, resolution);
    for (t, pose) in seq.frames.iter().enumerate() {
        if pose.num_joints() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: pose.num_joints(),
            });
        }
        render_into(out.frame_mut(t), pose, sigma, resolution);
    }
    Ok(out)
}

/// Argmax location and value of every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peaks {
    pub pose: Pose2D,
    pub confidence: Vec<f64>,
}

/// Per-channel argmax; ties go to the smallest row-major index. An all-zero
/// channel yields an invisible joint with confidence 0.
pub fn extract_peaks(stack: &HeatmapStack) -> Peaks {
    let mut coords = Vec::with_capacity(stack.joints);
    let mut visibility = Vec::with_capacity(stack.joints);
    let mut confidence = Vec::with_capacity(stack.joints);
    for k in 0..stack.joints {
        let ch = stack.channel(k);
        let mut best = 0;
        for (i, &v) in ch.iter().enumerate() {
            if v > ch[best] {
                best = i;
            }
        }
        let value = ch.get(best).copied().unwrap_or(0.0);
        let (row, col) = (best / stack.width, best % stack.width);
        coords.push([col as f64, row as f64]);
        visibility.push(value > 0.0);
        confidence.push(value.max(0.0));
    }
    Peaks {
        pose: Pose2D { coords, visibility },
        confidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(u: f64, v: f64) -> Pose2D {
        Pose2D::new(vec![[u, v]])
    }

    #[test]
    fn peak_at_center() {
        let s = render_heatmaps(&single(32.0, 32.0), 2.0, (64, 64)).unwrap();
        assert_eq!(s.channel(0)[32 * 64 + 32], 1.0);
        let max = s.maps.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn invisible_joint_is_zero() {
        let mut p = Pose2D::new(vec![[10.0, 10.0], [20.0, 20.0]]);
        p.visibility[1] = false;
        let s = render_heatmaps(&p, 2.0, (64, 64)).unwrap();
        assert!(s.channel(1).iter().all(|&v| v == 0.0));
        assert!(s.channel(0).iter().any(|&v| v > 0.0));
    }

    #[test]
    fn gaussian_value_at_distance_four() {
        // joint at column 10, row 20; pixel four columns to the right
        let s = render_heatmaps(&single(10.0, 20.0), 2.0, (64, 64)).unwrap();
        let v = s.channel(0)[20 * 64 + 14];
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn values_in_unit_interval() {
        let s = render_heatmaps(&single(3.3, 60.7), 1.3, (64, 48)).unwrap();
        assert!(s.maps.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn nonpositive_sigma() {
        assert!(matches!(
            render_heatmaps(&single(1.0, 1.0), 0.0, (8, 8)),
            Err(Error::NonPositiveSigma(_))
        ));
        assert!(render_heatmaps(&single(1.0, 1.0), f64::NAN, (8, 8)).is_err());
    }

    #[test]
    fn round_trip_on_grid() {
        let p = Pose2D::new(vec![[0.0, 0.0], [63.0, 5.0], [17.0, 42.0], [31.0, 63.0]]);
        let s = render_heatmaps(&p, 1.5, (64, 64)).unwrap();
        let peaks = extract_peaks(&s);
        assert_eq!(peaks.pose.coords, p.coords);
        assert!(peaks.pose.visibility.iter().all(|&v| v));
        assert!(peaks.confidence.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn zero_stack_is_invisible() {
        let s = HeatmapStack::zeros(17, (64, 64));
        let peaks = extract_peaks(&s);
        assert!(peaks.pose.visibility.iter().all(|&v| !v));
        assert!(peaks.confidence.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn two_peaks_and_ties() {
        let mut s = HeatmapStack::zeros(2, (8, 8));
        s.channel_mut(0)[3 * 8 + 1] = 0.4;
        s.channel_mut(0)[6 * 8 + 5] = 0.9;
        s.channel_mut(1)[5 * 8 + 2] = 0.7;
        s.channel_mut(1)[1 * 8 + 6] = 0.7;
        let peaks = extract_peaks(&s);
        // exhaustive scan oracle
        for k in 0..2 {
            let ch = s.channel(k);
            let max = ch.iter().cloned().fold(f64::MIN, f64::max);
            let idx = ch.iter().position(|&v| v == max).unwrap();
            assert_eq!(peaks.pose.coords[k], [(idx % 8) as f64, (idx / 8) as f64]);
            assert_eq!(peaks.confidence[k], max);
        }
        assert_eq!(peaks.pose.coords[1], [6.0, 1.0]);
    }

    #[test]
    fn sequence_rendering_matches_per_frame() {
        let seq = PoseSequence2D::new(vec![single(4.0, 5.0), single(6.5, 2.25)]);
        let hs = render_sequence(&seq, 2.0, (16, 16)).unwrap();
        for t in 0..2 {
            let one = render_heatmaps(&seq.frames[t], 2.0, (16, 16)).unwrap();
            assert_eq!(hs.frame(t), &one.maps[..]);
        }
    }
}
