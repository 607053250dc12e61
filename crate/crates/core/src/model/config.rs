use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kcs::feature_len;
use crate::skeleton::SkeletonTopology;

/// Heatmap embedding: a per-channel strided convolution (initialized as an
/// average pool) followed by one dense layer with ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub resolution: [usize; 2],
    pub pool_stride: usize,
    pub dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            resolution: [64, 64],
            pool_stride: 8,
            dim: 512,
        }
    }
}

impl EmbeddingConfig {
    pub fn pooled_len(&self, joints: usize) -> usize {
        joints * (self.resolution[0] / self.pool_stride) * (self.resolution[1] / self.pool_stride)
    }

    pub fn input_len(&self, joints: usize) -> usize {
        joints * self.resolution[0] * self.resolution[1]
    }
}

/// Multi-stride temporal network. Branch `s` stacks `layers` dilated
/// convolutions with dilations `s, 2s, 4s, …`; a dilation is reduced when
/// needed so that the branch's receptive field, centered on the middle frame,
/// stays inside the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnConfig {
    pub strides: Vec<usize>,
    /// Frames per input window (T). The prediction is for frame `T/2`.
    pub window: usize,
    pub kernel: usize,
    pub layers: usize,
    pub channels: usize,
    /// Millimeters per unit of network output.
    pub output_scale: f64,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            strides: vec![1, 2, 3, 5, 7],
            window: 64,
            kernel: 3,
            layers: 3,
            channels: 64,
            output_scale: 1000.0,
        }
    }
}

/// `1 + Σ (k − 1)·d` over the layers.
pub fn layer_receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| (kernel - 1) * d).sum::<usize>()
}

impl TcnConfig {
    /// Widest receptive field that stays symmetric about frame `T/2`.
    pub fn max_receptive_field(&self) -> usize {
        let c = self.window / 2;
        2 * c.min(self.window.saturating_sub(1 + c)) + 1
    }

    /// Dilations of the branch with the given stride.
    pub fn branch_dilations(&self, stride: usize) -> Result<Vec<usize>> {
        let k1 = self.kernel.saturating_sub(1);
        let budget = self.max_receptive_field() - 1;
        let mut used = 0;
        let mut out = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let wanted = stride << l;
            // leave room for dilation 1 in every later layer
            let later = (self.layers - l - 1) * k1;
            let cap = if k1 == 0 {
                wanted
            } else {
                budget.saturating_sub(used + later) / k1
            };
            let d = wanted.min(cap);
            if d == 0 {
                return Err(Error::InvalidConfig(format!(
                    "window {} is too short for stride {stride}",
                    self.window
                )));
            }
            used += k1 * d;
            out.push(d);
        }
        Ok(out)
    }

    pub fn branch_receptive_field(&self, stride: usize) -> Result<usize> {
        Ok(layer_receptive_field(
            self.kernel,
            &self.branch_dilations(stride)?,
        ))
    }

    pub fn validate(self) -> Result<Self> {
        if self.strides.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one stride is required".into(),
            ));
        }
        let mut sorted = self.strides.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.strides.len() || sorted[0] == 0 {
            return Err(Error::InvalidConfig(format!(
                "strides must be distinct and positive: {:?}",
                self.strides
            )));
        }
        if self.kernel < 2 || self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel must be odd and at least 3, got {}",
                self.kernel
            )));
        }
        if self.layers == 0 || self.channels == 0 || self.window < 3 {
            return Err(Error::InvalidConfig(
                "layers, channels and window must be positive".into(),
            ));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::InvalidConfig("output_scale must be positive".into()));
        }
        for &s in &self.strides {
            self.branch_dilations(s)?;
        }
        Ok(self)
    }
}

/// Largest branch receptive field of the network, in frames.
pub fn receptive_field(config: &TcnConfig) -> Result<usize> {
    config
        .strides
        .iter()
        .map(|&s| config.branch_receptive_field(s))
        .try_fold(0, |acc, rf| rf.map(|rf| acc.max(rf)))
}

/// Temporal convolutions over per-frame KCS features, averaged over the
/// window and mapped to one logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub window: usize,
    /// Channel width of each convolution; layer `l` has dilation `2^l`.
    pub hidden: Vec<usize>,
    pub kernel: usize,
    /// Frame gap of the temporal KCS.
    pub interval: usize,
    /// Poses are divided by this length (mm) before computing features.
    pub feature_scale: f64,
    /// Negative slope of the hidden activations.
    pub leak: f64,
    /// Multiplier on the temporal KCS block at the network input. Frame to
    /// frame changes are about twenty times smaller than the other blocks.
    pub temporal_gain: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            window: 16,
            hidden: vec![64, 64, 64],
            kernel: 3,
            interval: 1,
            feature_scale: 250.0,
            leak: 0.2,
            temporal_gain: 20.0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.hidden.len()).map(|l| 1 << l).collect()
    }

    pub fn receptive_field(&self) -> usize {
        layer_receptive_field(self.kernel, &self.dilations())
    }

    pub fn validate(self) -> Result<Self> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "discriminator needs nonzero hidden widths".into(),
            ));
        }
        if self.kernel == 0 || self.interval == 0 {
            return Err(Error::InvalidConfig(
                "discriminator kernel and interval must be positive".into(),
            ));
        }
        if self.receptive_field() > self.window || self.window <= self.interval {
            return Err(Error::InvalidConfig(format!(
                "discriminator window {} must exceed its receptive field {} and interval {}",
                self.window,
                self.receptive_field(),
                self.interval
            )));
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return Err(Error::InvalidConfig(
                "feature_scale must be positive".into(),
            ));
        }
        if !(self.temporal_gain > 0.0 && self.temporal_gain.is_finite()) {
            return Err(Error::InvalidConfig(
                "temporal_gain must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.leak) {
            return Err(Error::InvalidConfig("leak must lie in [0, 1)".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub topology: SkeletonTopology,
    pub embedding: EmbeddingConfig,
    pub tcn: TcnConfig,
    pub discriminator: DiscriminatorConfig,
}

impl ModelConfig {
    pub fn joints(&self) -> usize {
        self.topology.num_joints()
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.topology.num_joints(), self.topology.num_bones())
    }

    pub fn validate(self) -> Result<Self> {
        let topology = self.topology.validate()?;
        let e = &self.embedding;
        if e.pool_stride == 0
            || e.dim == 0
            || e.resolution[0] % e.pool_stride != 0
            || e.resolution[1] % e.pool_stride != 0
            || e.resolution.contains(&0)
        {
            return Err(Error::InvalidConfig(format!(
                "pool stride {} must divide resolution {:?}; dim must be positive",
                e.pool_stride, e.resolution
            )));
        }
        Ok(Self {
            topology,
            embedding: self.embedding,
            tcn: self.tcn.validate()?,
            discriminator: self.discriminator.validate()?,
        })
    }

    /// Number of scalar generator parameters, counted from the layer plan.
    pub fn generator_param_count(&self) -> usize {
        let k = self.joints();
        let e = &self.embedding;
        let s2 = e.pool_stride * e.pool_stride;
        let embed = k * s2 + k + e.pooled_len(k) * e.dim + e.dim;
        let t = &self.tcn;
        let c = t.channels;
        let branch = (e.dim * c * t.kernel + c) + (t.layers - 1) * (c * c * t.kernel + c);
        let head = t.strides.len() * c * 3 * k + 3 * k;
        embed + t.strides.len() * branch + head
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dilations_fit_window() {
        let t = TcnConfig::default();
        assert_eq!(t.max_receptive_field(), 63);
        assert_eq!(t.branch_dilations(1).unwrap(), vec![1, 2, 4]);
        assert_eq!(t.branch_dilations(5).unwrap(), vec![5, 10, 16]);
        assert_eq!(t.branch_dilations(7).unwrap(), vec![7, 14, 10]);
        assert_eq!(receptive_field(&t).unwrap(), 63);
    }

    #[test]
    fn layer_plans() {
        assert_eq!(layer_receptive_field(3, &[1]), 3);
        assert_eq!(layer_receptive_field(3, &[1, 3]), 9);
    }

    #[test]
    fn rejects_duplicate_strides() {
        let t = TcnConfig {
            strides: vec![1, 1],
            ..Default::default()
        };
        assert!(t.validate().is_err());
        assert!(TcnConfig {
            window: 4,
            strides: vec![1, 2, 3],
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn discriminator_fits_window() {
        let d = DiscriminatorConfig::default();
        assert_eq!(d.receptive_field(), 15);
        assert!(d.validate().is_ok());
    }
}
