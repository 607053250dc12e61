//! Adversarial training of the pose generator.
//!
//! One optimizer step per batch of sequences:
//!
//! 1. every sequence in the batch is augmented, rendered and pushed through
//!    the generator;
//! 2. `discriminator_steps` discriminator updates (skipped when `w3 = 0`):
//!    binary cross-entropy with rotated ground-truth windows labeled 1 and
//!    rotated predictions labeled 0, with new rotations for every update;
//! 3. generator step on `L3d + w1·Lmv + w2·L2d + w3·Lgen`, where `Lgen` is
//!    `−log D` of the randomly rotated predictions, scored by the freshly
//!    updated discriminator.
//!
//! Sequences marked 2D-only contribute `L2d` and `Lgen` but no 3D terms.
//! Per-sequence gradients are summed in batch order, so results do not depend
//! on the worker count.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::discriminator::Discriminator;
use super::generator::PoseModel;
use super::Bound;
use crate::augmentation::{apply_pipeline, AugmentationConfig};
use crate::error::{Error, Result};
use crate::losses::{
    graph_loss_2d, rotate_poses, sample_pose_rotation, CameraRotation, LossWeights, OrthoProjection,
};
use crate::metrics::{evaluate, mpjpe, MetricsReport};
use crate::nn::{
    optimizer_step, AdamConfig, Gradients, Graph, OptimizerState, ParamStore, Tensor, Var,
};
use crate::rng::{purpose, substream};
use crate::skeleton::{bones_from_pose, pose_from_bones, Pose3D, PoseSequence2D, SkeletonTopology};
use crate::synthdata::{project_to_2d, SequenceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optimizer: AdamConfig,
    pub discriminator_optimizer: AdamConfig,
    /// Discriminator updates per generator update, each with freshly
    /// rotated real and generated sequences.
    pub discriminator_steps: usize,
    /// Both learning rates are multiplied by `lr_decay^epoch`.
    pub lr_decay: f64,
    /// Training-time augmentation. Its `seed` is replaced by the run seed.
    pub augmentation: AugmentationConfig,
    pub epochs: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    /// Fraction of training sequences whose 3D labels are withheld.
    pub two_d_only_fraction: f64,
    /// 3D losses are computed on coordinates divided by this length (mm).
    pub length_unit: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optimizer: AdamConfig::default(),
            discriminator_optimizer: AdamConfig::default(),
            discriminator_steps: 1,
            lr_decay: 0.95,
            augmentation: AugmentationConfig::default(),
            epochs: 20,
            batch_size: 1,
            two_d_only_fraction: 0.0,
            length_unit: 100.0,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(self) -> Result<Self> {
        if self.batch_size == 0 || self.workers == 0 || self.discriminator_steps == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, workers and discriminator_steps must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.two_d_only_fraction) {
            return Err(Error::InvalidConfig(format!(
                "two_d_only_fraction must lie in [0, 1], got {}",
                self.two_d_only_fraction
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(self.length_unit > 0.0 && self.length_unit.is_finite()) {
            return Err(Error::InvalidConfig("length_unit must be positive".into()));
        }
        let mut augmentation = self.augmentation.validate()?;
        augmentation.seed = self.seed;
        Ok(Self {
            model: self.model.validate()?,
            weights: self.weights.validate()?,
            augmentation,
            ..self
        })
    }
}

/// Mean loss components over the sequences of one epoch. 3D terms are in
/// mm², the 2D term in px².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub l3d: f64,
    pub lmv: f64,
    pub l2d: f64,
    pub lgen: f64,
    pub disc: f64,
    /// Generator objective in training units.
    pub total: f64,
    pub sequences: usize,
}

/// Parameters, optimizer moments and bookkeeping of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    pub generator_opt: OptimizerState,
    pub discriminator_opt: OptimizerState,
    pub epoch: u32,
    /// Whether each training sequence keeps its 3D labels.
    pub labeled: Vec<bool>,
    pub history: Vec<EpochMetrics>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub generator: PoseModel,
    pub discriminator: Discriminator,
    projection: Arc<OrthoProjection>,
}

struct Item {
    index: usize,
    heatmaps: Option<Tensor>,
    gt: Option<Tensor>,
    targets2d: Vec<f64>,
    mask2d: Vec<f64>,
    view2: Option<(Option<Tensor>, CameraRotation)>,
    adversarial: Option<Adversarial>,
}

struct Adversarial {
    generator_rotation: CameraRotation,
    real: Tensor,
    /// (real, generated) rotations, one pair per discriminator step.
    rotations: Vec<(CameraRotation, CameraRotation)>,
}

struct Forward {
    graph: Graph,
    params: Bound,
    pred: Var,
    terms: Vec<(Term, Var)>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Term {
    L3d,
    Lmv,
    L2d,
    Lgen,
}

struct StepResult {
    grads: Vec<Vec<f64>>,
    values: Vec<(Term, f64)>,
    total: f64,
}

/// Applies `f` to every item, spreading contiguous chunks over `workers`
/// threads; output order matches input order.
fn par_map<T: Send, U: Send>(items: Vec<T>, workers: usize, f: impl Fn(T) -> U + Sync) -> Vec<U> {
    if workers <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut groups: Vec<Vec<T>> = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        groups.push(it.by_ref().take(chunk).collect());
    }
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = groups
            .into_iter()
            .map(|g| s.spawn(move || g.into_iter().map(f).collect::<Vec<U>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn grads_in_order(grads: &Gradients, params: &Bound, store: &ParamStore) -> Result<Vec<Vec<f64>>> {
    store
        .iter()
        .map(|(name, t)| {
            let v = params.get(name)?;
            Ok(grads
                .get(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()]))
        })
        .collect()
}

fn apply_mean_grads(
    store: &mut ParamStore,
    results: &[Vec<Vec<f64>>],
    state: &mut OptimizerState,
) -> Result<()> {
    let scale = 1.0 / results.len() as f64;
    for (i, (_, t)) in store.iter_mut().enumerate() {
        let mut acc = vec![0.0; t.len()];
        for r in results {
            for (a, g) in acc.iter_mut().zip(&r[i]) {
                *a += g;
            }
        }
        acc.iter_mut().for_each(|a| *a *= scale);
        t.grad = Some(acc);
    }
    optimizer_step(store, state)
}

fn flat_rows(poses: &[Pose3D]) -> Result<Tensor> {
    let k = poses.first().map_or(0, |p| p.num_joints());
    Tensor::from_rows(
        poses.len(),
        3 * k,
        poses.iter().flat_map(|p| p.flat()).collect(),
    )
}

/// Ground-truth poses of the frames the generator predicts.
fn center_frames(record: &SequenceRecord, window: usize) -> Vec<Pose3D> {
    let poses = record.poses3d();
    let outputs = record.len() + 1 - window;
    poses.frames[window / 2..window / 2 + outputs].to_vec()
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let config = config.validate()?;
        let generator = PoseModel::new(config.model.clone())?;
        let discriminator = Discriminator::new(config.model.clone())?;
        let projection = Arc::new(OrthoProjection::for_topology(&config.model.topology));
        Ok(Self {
            config,
            generator,
            discriminator,
            projection,
        })
    }

    fn adversarial(&self) -> bool {
        self.config.weights.w3 > 0.0
    }

    fn check_records(&self, records: &[SequenceRecord]) -> Result<()> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let t = self.config.model.tcn.window;
        let needed = if self.adversarial() {
            t - 1 + self.config.model.discriminator.window
        } else {
            t
        };
        for r in records {
            if r.topology != self.config.model.topology {
                return Err(Error::InvalidConfig(
                    "record topology differs from the model topology".into(),
                ));
            }
            if r.len() < needed {
                return Err(Error::SequenceTooShort {
                    len: r.len(),
                    needed: needed - 1,
                });
            }
        }
        Ok(())
    }

    pub fn init_state(&self, records: &[SequenceRecord]) -> Result<TrainState> {
        self.check_records(records)?;
        let seed = self.config.seed;
        let mut generator =
            self.generator
                .init_params(&mut substream(seed, purpose::INIT, 0, 0))?;
        let discriminator =
            self.discriminator
                .init_params(&mut substream(seed, purpose::INIT, 0, 1))?;
        let mut split = substream(seed, purpose::SPLIT, 0, 0);
        let mut labeled: Vec<bool> = records
            .iter()
            .map(|_| !split.random_bool(self.config.two_d_only_fraction))
            .collect();
        if self.adversarial() && !labeled.iter().any(|&l| l) {
            // the discriminator needs at least one real 3D sequence
            labeled[0] = true;
        }
        let k = self.config.model.joints();
        let mut sum = vec![0.0; 3 * k];
        let mut n = 0usize;
        for (r, _) in records.iter().zip(&labeled).filter(|(_, &l)| l) {
            for f in &r.frames {
                for (s, v) in sum.iter_mut().zip(f.j3d.iter().flatten()) {
                    *s += v;
                }
                n += 1;
            }
        }
        if n > 0 {
            let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            self.generator
                .set_mean_pose(&mut generator, &Pose3D::from_flat(&mean))?;
        }
        Ok(TrainState {
            generator,
            discriminator,
            generator_opt: OptimizerState::new(self.config.optimizer),
            discriminator_opt: OptimizerState::new(self.config.discriminator_optimizer),
            epoch: 0,
            labeled,
            history: Vec::new(),
        })
    }

    fn render(&self, poses: &PoseSequence2D, epoch: u32, stream: u32) -> Result<Tensor> {
        let aug = apply_pipeline(
            &self.config.augmentation,
            poses,
            &self.config.model.topology,
            epoch,
            stream,
        )?;
        self.generator.into_input(aug.heatmaps)
    }

    fn prepare(
        &self,
        records: &[SequenceRecord],
        labeled: &[bool],
        epoch: u32,
        index: usize,
    ) -> Result<Item> {
        let record = &records[index];
        let t = self.config.model.tcn.window;
        let poses2d = record.poses2d();
        let heatmaps = self.render(&poses2d, epoch, index as u32)?;
        let centers = center_frames(record, t);
        let gt = if labeled[index] {
            Some(flat_rows(&centers)?)
        } else {
            None
        };
        let mut targets2d = Vec::new();
        let mut mask2d = Vec::new();
        for p in &poses2d.frames[t / 2..t / 2 + centers.len()] {
            for (c, &v) in p.coords.iter().zip(&p.visibility) {
                targets2d.extend_from_slice(c);
                let m = if v { 1.0 } else { 0.0 };
                mask2d.extend_from_slice(&[m, m]);
            }
        }
        let view2 = match record.cameras.first() {
            Some(r) if self.config.weights.w1 > 0.0 => {
                let rotated = record.poses3d().transformed(r.matrix());
                let p2 = project_to_2d(&rotated, &self.projection);
                let stream = index as u32 | 0x8000_0000;
                Some((Some(self.render(&p2, epoch, stream)?), *r))
            }
            _ => None,
        };
        let adversarial = if self.adversarial() {
            let mut rng = substream(self.config.seed, purpose::ROTATION, epoch, index as u32);
            // 2D-only sequences borrow real motion from the next labeled one
            let source = (0..records.len())
                .map(|o| (index + o) % records.len())
                .find(|&i| labeled[i])
                .ok_or(Error::EmptyDataset)?;
            Some(Adversarial {
                generator_rotation: sample_pose_rotation(&mut rng),
                real: flat_rows(&center_frames(&records[source], t))?,
                rotations: (0..self.config.discriminator_steps)
                    .map(|_| {
                        (
                            sample_pose_rotation(&mut rng),
                            sample_pose_rotation(&mut rng),
                        )
                    })
                    .collect(),
            })
        } else {
            None
        };
        Ok(Item {
            index,
            heatmaps: Some(heatmaps),
            gt,
            targets2d,
            mask2d,
            view2,
            adversarial,
        })
    }

    fn unit_sq(&self) -> f64 {
        self.config.length_unit * self.config.length_unit
    }

    /// Generator forward pass and every loss term that does not involve the
    /// discriminator.
    fn forward(&self, store: &ParamStore, item: &mut Item) -> Result<Forward> {
        let mut g = Graph::new();
        let params = Bound::from_store(&mut g, store)?;
        let x = g.constant(item.heatmaps.take().ok_or(Error::EmptyDataset)?);
        let pred = self.generator.forward(&mut g, &params, x)?;
        let inv = 1.0 / self.unit_sq();
        let mut terms = Vec::new();
        if let Some(gt) = &item.gt {
            let target = g.constant(gt.clone());
            let l = g.mse(pred, target)?;
            terms.push((Term::L3d, g.scale(l, inv)));
        }
        if let Some((hm, r)) = &mut item.view2 {
            let x2 = g.constant(hm.take().ok_or(Error::EmptyDataset)?);
            let pred2 = self.generator.forward(&mut g, &params, x2)?;
            let rotated = rotate_poses(&mut g, pred, r)?;
            let l = g.mse(rotated, pred2)?;
            terms.push((Term::Lmv, g.scale(l, inv)));
        }
        if self.config.weights.w2 > 0.0 || item.gt.is_none() {
            let l = graph_loss_2d(
                &mut g,
                pred,
                &item.targets2d,
                &item.mask2d,
                &self.projection,
            )?;
            terms.push((Term::L2d, l));
        }
        Ok(Forward {
            graph: g,
            params,
            pred,
            terms,
        })
    }

    fn discriminator_grads(
        &self,
        store: &ParamStore,
        adv: &Adversarial,
        fake: Tensor,
        step: usize,
    ) -> Result<(Vec<Vec<f64>>, f64)> {
        let (real_rotation, fake_rotation) = &adv.rotations[step];
        let mut g = Graph::new();
        let p = Bound::from_store(&mut g, store)?;
        let real = g.constant(adv.real.clone());
        let fake = g.constant(fake);
        let zr = self
            .discriminator
            .rotated_logits(&mut g, &p, real, real_rotation)?;
        let zf = self
            .discriminator
            .rotated_logits(&mut g, &p, fake, fake_rotation)?;
        let (nr, nf) = (g.value(zr).len(), g.value(zf).len());
        let z = g.concat_rows(&[zr, zf])?;
        let targets: Vec<f64> = std::iter::repeat_n(1.0, nr)
            .chain(std::iter::repeat_n(0.0, nf))
            .collect();
        let loss = g.bce_with_logits(z, &targets)?;
        let grads = g.backward(loss)?;
        Ok((grads_in_order(&grads, &p, store)?, g.value(loss).item()))
    }

    fn generator_grads(
        &self,
        store: &ParamStore,
        disc: &ParamStore,
        item: &Item,
        fwd: Forward,
    ) -> Result<StepResult> {
        let Forward {
            graph: mut g,
            params,
            pred,
            mut terms,
        } = fwd;
        if let Some(adv) = &item.adversarial {
            let dp = Bound::from_store(&mut g, disc)?;
            let z =
                self.discriminator
                    .rotated_logits(&mut g, &dp, pred, &adv.generator_rotation)?;
            let ones = vec![1.0; g.value(z).len()];
            terms.push((Term::Lgen, g.bce_with_logits(z, &ones)?));
        }
        let w = self.config.weights;
        let mut total: Option<Var> = None;
        for &(term, v) in &terms {
            let weight = match term {
                Term::L3d => 1.0,
                Term::Lmv => w.w1,
                Term::L2d => w.w2,
                Term::Lgen => w.w3,
            };
            let scaled = g.scale(v, weight);
            total = Some(match total {
                Some(t) => g.add(t, scaled)?,
                None => scaled,
            });
        }
        let total = total
            .ok_or_else(|| Error::InvalidConfig("no loss term applies to this sequence".into()))?;
        let value = g.value(total).item();
        let values = terms
            .iter()
            .map(|&(t, v)| (t, g.value(v).item()))
            .collect::<Vec<_>>();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "sequence {}: components {:?}",
                item.index,
                named(&values)
            )));
        }
        let grads = g.backward(total)?;
        Ok(StepResult {
            grads: grads_in_order(&grads, &params, store)?,
            values,
            total: value,
        })
    }

    /// Runs one pass over `records` in a seed-determined order.
    pub fn train_epoch(
        &self,
        state: &mut TrainState,
        records: &[SequenceRecord],
    ) -> Result<EpochMetrics> {
        self.check_records(records)?;
        if state.labeled.len() != records.len() {
            return Err(Error::ShapeMismatch(format!(
                "state covers {} sequences, dataset has {}",
                state.labeled.len(),
                records.len()
            )));
        }
        let epoch = state.epoch;
        let decay = self.config.lr_decay.powi(epoch as i32);
        state.generator_opt.config.learning_rate = self.config.optimizer.learning_rate * decay;
        state.discriminator_opt.config.learning_rate =
            self.config.discriminator_optimizer.learning_rate * decay;
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut substream(self.config.seed, purpose::SHUFFLE, epoch, 0));
        let workers = self.config.workers;
        let mut metrics = EpochMetrics {
            epoch,
            ..Default::default()
        };
        let mut counts = [0usize; 4];
        let mut disc_steps = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            let labeled = &state.labeled;
            let generator = &state.generator;
            let prepared = par_map(batch.to_vec(), workers, |i| {
                let mut item = self.prepare(records, labeled, epoch, i)?;
                let fwd = self.forward(generator, &mut item)?;
                Ok((item, fwd))
            });
            let prepared: Vec<(Item, Forward)> = prepared.into_iter().collect::<Result<_>>()?;

            let disc_steps_per_batch = if self.adversarial() {
                self.config.discriminator_steps
            } else {
                0
            };
            for step in 0..disc_steps_per_batch {
                let disc = &state.discriminator;
                let results = par_map(prepared.iter().collect(), workers, |(item, fwd)| {
                    let fake = fwd.graph.value(fwd.pred).clone();
                    let adv = item.adversarial.as_ref().expect("adversarial item");
                    self.discriminator_grads(disc, adv, fake, step)
                });
                let results: Vec<(Vec<Vec<f64>>, f64)> =
                    results.into_iter().collect::<Result<_>>()?;
                let grads: Vec<Vec<Vec<f64>>> = results.iter().map(|r| r.0.clone()).collect();
                for (_, l) in &results {
                    metrics.disc += l;
                    disc_steps += 1;
                }
                apply_mean_grads(
                    &mut state.discriminator,
                    &grads,
                    &mut state.discriminator_opt,
                )?;
            }

            let disc = &state.discriminator;
            let generator = &state.generator;
            let results = par_map(prepared, workers, |(item, fwd)| {
                self.generator_grads(generator, disc, &item, fwd)
            });
            let results: Vec<StepResult> = results.into_iter().collect::<Result<_>>()?;
            for r in &results {
                metrics.total += r.total;
                for &(t, v) in &r.values {
                    let (slot, unit) = match t {
                        Term::L3d => (0, self.unit_sq()),
                        Term::Lmv => (1, self.unit_sq()),
                        Term::L2d => (2, 1.0),
                        Term::Lgen => (3, 1.0),
                    };
                    counts[slot] += 1;
                    let v = v * unit;
                    match slot {
                        0 => metrics.l3d += v,
                        1 => metrics.lmv += v,
                        2 => metrics.l2d += v,
                        _ => metrics.lgen += v,
                    }
                }
            }
            let grads: Vec<Vec<Vec<f64>>> = results.into_iter().map(|r| r.grads).collect();
            apply_mean_grads(&mut state.generator, &grads, &mut state.generator_opt)?;
            if !state.generator.all_finite() || !state.discriminator.all_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "parameters became non-finite in epoch {epoch} after sequences {batch:?}"
                )));
            }
        }
        let avg = |v: f64, n: usize| if n == 0 { 0.0 } else { v / n as f64 };
        metrics.sequences = records.len();
        metrics.l3d = avg(metrics.l3d, counts[0]);
        metrics.lmv = avg(metrics.lmv, counts[1]);
        metrics.l2d = avg(metrics.l2d, counts[2]);
        metrics.lgen = avg(metrics.lgen, counts[3]);
        metrics.disc = avg(metrics.disc, disc_steps);
        metrics.total = avg(metrics.total, records.len());
        state.epoch += 1;
        state.history.push(metrics);
        Ok(metrics)
    }

    /// Initializes and trains for `config.epochs` epochs.
    pub fn fit(
        &self,
        records: &[SequenceRecord],
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<TrainState> {
        let mut state = self.init_state(records)?;
        for _ in 0..self.config.epochs {
            let m = self.train_epoch(&mut state, records)?;
            log::info!(
                "epoch {}: l3d {:.1} mm², lmv {:.1} mm², l2d {:.3} px², lgen {:.4}, disc {:.4}",
                m.epoch,
                m.l3d,
                m.lmv,
                m.l2d,
                m.lgen,
                m.disc
            );
            on_epoch(&m);
        }
        Ok(state)
    }
}

fn named(values: &[(Term, f64)]) -> Vec<(&'static str, f64)> {
    values
        .iter()
        .map(|&(t, v)| {
            let n = match t {
                Term::L3d => "l3d",
                Term::Lmv => "lmv",
                Term::L2d => "l2d",
                Term::Lgen => "lgen",
            };
            (n, v)
        })
        .collect()
}

/// Predictions and ground truth for the predictable frames of `record`.
/// With `augmentation = Some((config, index))` the heatmaps go through the
/// augmentation pipeline on stream `(config.seed, AUGMENT, 0, index)`.
pub fn predict_record(
    model: &PoseModel,
    store: &ParamStore,
    record: &SequenceRecord,
    augmentation: Option<(&AugmentationConfig, u32)>,
) -> Result<(Vec<Pose3D>, Vec<Pose3D>)> {
    let cfg = &model.config;
    let disabled = AugmentationConfig {
        sigma: augmentation.map_or(crate::heatmap::DEFAULT_SIGMA, |a| a.0.sigma),
        resolution: cfg.embedding.resolution,
        ..AugmentationConfig::disabled()
    };
    let (aug, index) = augmentation.unwrap_or((&disabled, 0));
    let out = apply_pipeline(aug, &record.poses2d(), &cfg.topology, 0, index)?;
    let pred = model.predict_input(store, model.into_input(out.heatmaps)?)?;
    Ok((pred, center_frames(record, cfg.tcn.window)))
}

/// Metrics pooled over every predictable frame of every record.
pub fn evaluate_records(
    model: &PoseModel,
    store: &ParamStore,
    records: &[SequenceRecord],
    augmentation: Option<&AugmentationConfig>,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let (p, g) = predict_record(model, store, r, augmentation.map(|a| (a, i as u32)))?;
        pred.extend(p);
        gt.extend(g);
    }
    evaluate(&pred, &gt, &model.config.topology)
}

/// MPJPE of predicting every center frame `c` with the ground-truth pose of
/// its window's first frame `c − T/2`.
pub fn zero_velocity_baseline(records: &[SequenceRecord], window: usize) -> Result<f64> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for r in records {
        let poses = r.poses3d();
        if poses.len() < window {
            return Err(Error::SequenceTooShort {
                len: poses.len(),
                needed: window - 1,
            });
        }
        for c in window / 2..=poses.len() - window / 2 {
            pred.push(poses.frames[c - window / 2].clone());
            gt.push(poses.frames[c].clone());
        }
    }
    mpjpe(&pred, &gt)
}

/// Scales every bone of every frame by an independent factor drawn from
/// `[1 − range, 1 + range]` and rebuilds the joints from the root outward.
pub fn jitter_bone_lengths<R: Rng + ?Sized>(
    poses: &[Pose3D],
    topology: &SkeletonTopology,
    range: f64,
    rng: &mut R,
) -> Result<Vec<Pose3D>> {
    poses
        .iter()
        .map(|p| {
            let mut bones = bones_from_pose(p, topology)?;
            for c in &mut bones.columns {
                let f = 1.0 + rng.random_range(-range..=range);
                c.iter_mut().for_each(|v| *v *= f);
            }
            Ok(pose_from_bones(
                &bones,
                topology,
                p.coords[topology.root_index],
            ))
        })
        .collect()
}
