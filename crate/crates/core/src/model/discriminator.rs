use std::sync::Arc;

use rand::Rng;

use super::config::ModelConfig;
use super::{he, Bound};
use crate::error::{Error, Result};
use crate::kcs::{DiscriminatorFeatures, KcsRowOp};
use crate::losses::{rotate_poses, CameraRotation};
use crate::nn::{sigmoid, Graph, ParamStore, Tensor, Var};

/// Scores pose sequences as real (near 1) or generated (near 0) from their
/// spatial KCS, temporal KCS and joint coordinates.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: ModelConfig,
    kcs: Arc<KcsRowOp>,
}

impl Discriminator {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let config = config.validate()?;
        let kcs = Arc::new(KcsRowOp::new(&config.topology));
        Ok(Self { config, kcs })
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let d = &self.config.discriminator;
        let mut store = ParamStore::new();
        let mut cin = self.config.feature_len();
        for (l, &h) in d.hidden.iter().enumerate() {
            store.insert(
                format!("disc.conv{l}.w"),
                he(&[h, cin, d.kernel], cin * d.kernel, 1.0, rng),
            )?;
            store.insert(format!("disc.conv{l}.b"), Tensor::zeros(&[h]))?;
            cin = h;
        }
        store.insert("disc.out.w", he(&[cin, 1], cin, 0.5, rng))?;
        store.insert("disc.out.b", Tensor::zeros(&[1]))?;
        Ok(store)
    }

    /// Per-frame features of an `N × 3K` pose matrix in mm: Ψ upper
    /// triangle, Φ upper triangle, then coordinates, all computed on poses
    /// divided by the feature scale. Matches
    /// [`crate::kcs::sequence_descriptor`] on the scaled poses.
    pub fn features(&self, g: &mut Graph, poses: Var) -> Result<Var> {
        let d = &self.config.discriminator;
        let (n, _) = g.value(poses).dims2()?;
        if n <= d.interval {
            return Err(Error::SequenceTooShort {
                len: n,
                needed: d.interval,
            });
        }
        let x = g.scale(poses, 1.0 / d.feature_scale);
        let psi = g.row_map(x, self.kcs.clone())?;
        let base: Vec<usize> = (0..n).map(|t| t.min(n - 1 - d.interval)).collect();
        let ahead: Vec<usize> = base.iter().map(|s| s + d.interval).collect();
        let later = g.gather_rows(psi, &ahead)?;
        let earlier = g.gather_rows(psi, &base)?;
        let phi = g.sub(later, earlier)?;
        g.concat_cols(&[psi, phi, x])
    }

    /// One logit per non-overlapping window of `N × F` features; windows
    /// start at frame 0 and a ragged tail is ignored.
    pub fn logits(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<Var> {
        let d = &self.config.discriminator;
        let (n, f) = g.value(features).dims2()?;
        if f != self.config.feature_len() {
            return Err(Error::DimensionMismatch {
                expected: self.config.feature_len(),
                got: f,
            });
        }
        let windows = n / d.window;
        if windows == 0 {
            return Err(Error::WrongWindowLength {
                expected: d.window,
                got: n,
            });
        }
        let bones = self.config.topology.num_bones();
        let tri = bones * (bones + 1) / 2;
        let gains: Vec<f64> = (0..f)
            .map(|c| {
                if (tri..2 * tri).contains(&c) {
                    d.temporal_gain
                } else {
                    1.0
                }
            })
            .collect();
        let gains = g.constant(Tensor::from_rows(1, f, gains)?);
        let ones = g.constant(Tensor::full(&[n, 1], 1.0));
        let gains = g.matmul(ones, gains)?;
        let features = g.mul(features, gains)?;
        let mut h = g.transpose(features)?;
        for (l, dil) in d.dilations().into_iter().enumerate() {
            let y = g.conv1d(
                h,
                p.get(&format!("disc.conv{l}.w"))?,
                Some(p.get(&format!("disc.conv{l}.b"))?),
                dil,
            )?;
            h = g.leaky_relu(y, d.leak);
        }
        // average the outputs that lie entirely inside each window
        let per = d.window - d.receptive_field() + 1;
        let cols = n - d.receptive_field() + 1;
        let mut pool = vec![0.0; cols * windows];
        for w in 0..windows {
            for i in 0..per {
                pool[(w * d.window + i) * windows + w] = 1.0 / per as f64;
            }
        }
        let pool = g.constant(Tensor::from_rows(cols, windows, pool)?);
        let pooled = g.matmul(h, pool)?;
        let pooled = g.transpose(pooled)?;
        g.dense(pooled, p.get("disc.out.w")?, p.get("disc.out.b")?)
    }

    /// Logits of `rotation` applied to an `N × 3K` pose matrix in mm.
    pub fn rotated_logits(
        &self,
        g: &mut Graph,
        p: &Bound,
        poses: Var,
        rotation: &CameraRotation,
    ) -> Result<Var> {
        let r = rotate_poses(g, poses, rotation)?;
        let f = self.features(g, r)?;
        self.logits(g, p, f)
    }

    /// Probability that a single feature window is real. Feature values
    /// must already be in scaled units (see [`Discriminator::features`]).
    pub fn score(&self, store: &ParamStore, window: &DiscriminatorFeatures) -> Result<f64> {
        let d = &self.config.discriminator;
        if window.frames.len() != d.window {
            return Err(Error::WrongWindowLength {
                expected: d.window,
                got: window.frames.len(),
            });
        }
        let f = self.config.feature_len();
        let mut g = Graph::new();
        let p = Bound::from_store(&mut g, store)?;
        let x = g.constant(Tensor::from_rows(d.window, f, window.frames.concat())?);
        let z = self.logits(&mut g, &p, x)?;
        Ok(sigmoid(g.value(z).values[0]))
    }

    /// Probability per window for a pose sequence in mm.
    pub fn score_poses(
        &self,
        store: &ParamStore,
        poses: &[crate::skeleton::Pose3D],
    ) -> Result<Vec<f64>> {
        let k = self.config.joints();
        let flat: Vec<f64> = poses.iter().flat_map(|p| p.flat()).collect();
        let mut g = Graph::new();
        let p = Bound::from_store(&mut g, store)?;
        let x = g.constant(Tensor::from_rows(poses.len(), 3 * k, flat)?);
        let f = self.features(&mut g, x)?;
        let z = self.logits(&mut g, &p, f)?;
        Ok(g.value(z).values.iter().map(|&v| sigmoid(v)).collect())
    }
}
