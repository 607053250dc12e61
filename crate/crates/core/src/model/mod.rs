//! The pose generator (heatmap embedding + multi-stride TCN), the KCS
//! discriminator, and adversarial training.

mod check;
mod checkpoint;
mod config;
mod discriminator;
mod generator;
mod train;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Tensor, Var};

pub use check::{check_discriminator, check_embedding, check_generator, check_temporal, CheckPlan};
pub use checkpoint::Checkpoint;
pub use config::{
    layer_receptive_field, receptive_field, DiscriminatorConfig, EmbeddingConfig, ModelConfig,
    TcnConfig,
};
pub use discriminator::Discriminator;
pub use generator::PoseModel;
pub use train::{
    evaluate_records, jitter_bone_lengths, predict_record, zero_velocity_baseline, EpochMetrics,
    TrainConfig, TrainState, Trainer,
};

/// Parameters placed on a graph, looked up by name.
#[derive(Debug, Clone, Default)]
pub struct Bound(HashMap<String, Var>);

impl Bound {
    /// Registers every parameter of `store` on `g`.
    pub fn from_store(g: &mut Graph, store: &ParamStore) -> Result<Self> {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        let mut map = HashMap::with_capacity(names.len());
        for n in names {
            let v = g.param(store, &n)?;
            map.insert(n, v);
        }
        Ok(Self(map))
    }

    /// Binds explicit graph nodes, e.g. variables created by a gradient check.
    pub fn from_vars(names: &[String], vars: &[Var]) -> Self {
        Self(names.iter().cloned().zip(vars.iter().copied()).collect())
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn merged(mut self, other: Bound) -> Self {
        self.0.extend(other.0);
        self
    }
}

/// He-normal weights with `fan_in` inputs.
fn he<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        values: (0..n).map(|_| normal.sample(rng)).collect(),
        grad: None,
    }
}
