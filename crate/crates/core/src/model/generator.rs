use rand::Rng;

use super::config::ModelConfig;
use super::{he, Bound};
use crate::error::{Error, Result};
use crate::heatmap::{HeatmapSequence, HeatmapStack};
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::skeleton::Pose3D;

/// Heatmaps in, root-relative 3D poses (mm) out.
///
/// Over a sequence of `N` frames the network runs fully convolutionally and
/// returns `N − T + 1` poses, one for every window of `T` frames; pose `j`
/// belongs to frame `j + T/2`.
#[derive(Debug, Clone)]
pub struct PoseModel {
    pub config: ModelConfig,
}

impl PoseModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Ok(Self {
            config: config.validate()?,
        })
    }

    fn branch_name(stride: usize, layer: usize) -> String {
        format!("gen.tcn.s{stride}.l{layer}")
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let c = &self.config;
        let k = c.joints();
        let e = &c.embedding;
        let s2 = e.pool_stride * e.pool_stride;
        let mut store = ParamStore::new();
        store.insert("gen.embed.pool.w", Tensor::full(&[k, s2], 1.0 / s2 as f64))?;
        store.insert("gen.embed.pool.b", Tensor::zeros(&[k]))?;
        let pooled = e.pooled_len(k);
        store.insert("gen.embed.dense.w", he(&[pooled, e.dim], pooled, 1.0, rng))?;
        store.insert("gen.embed.dense.b", Tensor::zeros(&[e.dim]))?;
        let t = &c.tcn;
        for &s in &t.strides {
            for l in 0..t.layers {
                let cin = if l == 0 { e.dim } else { t.channels };
                let name = Self::branch_name(s, l);
                store.insert(
                    format!("{name}.w"),
                    he(&[t.channels, cin, t.kernel], cin * t.kernel, 1.0, rng),
                )?;
                store.insert(format!("{name}.b"), Tensor::zeros(&[t.channels]))?;
            }
        }
        let width = t.strides.len() * t.channels;
        store.insert("gen.head.w", he(&[3 * k, width, 1], width, 0.5, rng))?;
        store.insert("gen.head.b", Tensor::zeros(&[3 * k]))?;
        Ok(store)
    }

    /// Sets the output bias so an untrained network predicts `pose`.
    pub fn set_mean_pose(&self, store: &mut ParamStore, pose: &Pose3D) -> Result<()> {
        let scale = self.config.tcn.output_scale;
        let b = store
            .get_mut("gen.head.b")
            .ok_or_else(|| Error::UnknownParam("gen.head.b".into()))?;
        let flat = pose.flat();
        if flat.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: b.len(),
                got: flat.len(),
            });
        }
        b.values = flat.iter().map(|v| v / scale).collect();
        Ok(())
    }

    /// `N × (K·H·W)` heatmaps to `N × E` embeddings.
    pub fn embed(&self, g: &mut Graph, p: &Bound, heatmaps: Var) -> Result<Var> {
        let c = &self.config;
        let e = &c.embedding;
        let pooled = g.depthwise_pool2d(
            heatmaps,
            p.get("gen.embed.pool.w")?,
            p.get("gen.embed.pool.b")?,
            c.joints(),
            (e.resolution[0], e.resolution[1]),
            e.pool_stride,
        )?;
        let h = g.dense(
            pooled,
            p.get("gen.embed.dense.w")?,
            p.get("gen.embed.dense.b")?,
        )?;
        Ok(g.relu(h))
    }

    /// `N × E` embeddings to `(N − T + 1) × 3K` poses in mm.
    pub fn temporal(&self, g: &mut Graph, p: &Bound, embeddings: Var) -> Result<Var> {
        let t = &self.config.tcn;
        let (n, _) = g.value(embeddings).dims2()?;
        if n < t.window {
            return Err(Error::SequenceTooShort {
                len: n,
                needed: t.window - 1,
            });
        }
        let outputs = n - t.window + 1;
        let x = g.transpose(embeddings)?;
        let mut branches = Vec::with_capacity(t.strides.len());
        for &s in &t.strides {
            let dilations = t.branch_dilations(s)?;
            let mut h = x;
            for (l, &d) in dilations.iter().enumerate() {
                let name = Self::branch_name(s, l);
                let w = p.get(&format!("{name}.w"))?;
                let b = p.get(&format!("{name}.b"))?;
                let y = g.conv1d(h, w, Some(b), d)?;
                h = g.relu(y);
            }
            // column i of h is centered on input frame i + (rf − 1)/2
            let half = (super::layer_receptive_field(t.kernel, &dilations) - 1) / 2;
            let start = t.window / 2 - half;
            branches.push(g.slice_cols(h, start, outputs)?);
        }
        let features = g.concat_rows(&branches)?;
        let head = g.conv1d(
            features,
            p.get("gen.head.w")?,
            Some(p.get("gen.head.b")?),
            1,
        )?;
        let poses = g.transpose(head)?;
        Ok(g.scale(poses, t.output_scale))
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, heatmaps: Var) -> Result<Var> {
        let e = self.embed(g, p, heatmaps)?;
        self.temporal(g, p, e)
    }

    pub fn heatmap_input(&self, heatmaps: &HeatmapSequence) -> Result<Tensor> {
        self.check_heatmaps(heatmaps)?;
        Tensor::from_rows(heatmaps.frames, heatmaps.frame_len(), heatmaps.data.clone())
    }

    /// Like [`PoseModel::heatmap_input`] without copying the pixels.
    pub fn into_input(&self, heatmaps: HeatmapSequence) -> Result<Tensor> {
        self.check_heatmaps(&heatmaps)?;
        let (n, len) = (heatmaps.frames, heatmaps.frame_len());
        Tensor::from_rows(n, len, heatmaps.data)
    }

    fn check_heatmaps(&self, heatmaps: &HeatmapSequence) -> Result<()> {
        let e = &self.config.embedding;
        let want = (self.config.joints(), e.resolution[0], e.resolution[1]);
        if (heatmaps.joints, heatmaps.height, heatmaps.width) != want {
            return Err(Error::ShapeMismatch(format!(
                "heatmaps {}x{}x{}, model expects {want:?}",
                heatmaps.joints, heatmaps.height, heatmaps.width
            )));
        }
        Ok(())
    }

    /// Embedding of a single frame.
    pub fn embed_stack(&self, store: &ParamStore, stack: &HeatmapStack) -> Result<Vec<f64>> {
        let seq = HeatmapSequence::from_stacks(std::slice::from_ref(stack));
        let mut g = Graph::new();
        let p = Bound::from_store(&mut g, store)?;
        let x = g.constant(self.heatmap_input(&seq)?);
        let e = self.embed(&mut g, &p, x)?;
        Ok(g.value(e).values.clone())
    }

    /// Pose of the center frame of a window of exactly `T` embeddings.
    pub fn forward_pose(&self, store: &ParamStore, window: &[Vec<f64>]) -> Result<Pose3D> {
        let t = self.config.tcn.window;
        if window.len() != t {
            return Err(Error::WrongWindowLength {
                expected: t,
                got: window.len(),
            });
        }
        let dim = self.config.embedding.dim;
        if let Some(bad) = window.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let mut g = Graph::new();
        let p = Bound::from_store(&mut g, store)?;
        let x = g.constant(Tensor::from_rows(t, dim, window.concat())?);
        let y = self.temporal(&mut g, &p, x)?;
        Ok(Pose3D::from_flat(&g.value(y).values))
    }

    /// Poses for frames `T/2 ..= N − T/2` of a heatmap sequence.
    pub fn predict(&self, store: &ParamStore, heatmaps: &HeatmapSequence) -> Result<Vec<Pose3D>> {
        self.predict_input(store, self.heatmap_input(heatmaps)?)
    }

    /// Poses for an `N × (K·H·W)` input built by [`PoseModel::into_input`].
    pub fn predict_input(&self, store: &ParamStore, input: Tensor) -> Result<Vec<Pose3D>> {
        let mut g = Graph::new();
        let p = Bound::from_store(&mut g, store)?;
        let x = g.constant(input);
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y)
            .values
            .chunks_exact(3 * self.config.joints())
            .map(Pose3D::from_flat)
            .collect())
    }
}
