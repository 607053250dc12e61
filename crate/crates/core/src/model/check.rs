//! Finite-difference checks of the full networks, with respect to both the
//! parameters and the input.

use rand::Rng;

use super::discriminator::Discriminator;
use super::generator::PoseModel;
use super::Bound;
use crate::error::Result;
use crate::nn::{grad_check, GradCheckReport, Graph, ParamStore, Tensor, Var, DEFAULT_STEP};

/// Sampling plan shared by the model checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckPlan {
    /// Independent random points (fresh parameters and inputs each).
    pub points: usize,
    /// Coordinates sampled per tensor; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub eps: f64,
}

impl Default for CheckPlan {
    fn default() -> Self {
        Self {
            points: 10,
            max_coords: Some(8),
            eps: DEFAULT_STEP,
        }
    }
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        values: (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        grad: None,
    }
}

/// Splits a parameter store into names and tensors, after the input.
fn with_params(input: Tensor, store: ParamStore) -> (Vec<String>, Vec<Tensor>) {
    let mut names = Vec::with_capacity(store.len());
    let mut point = vec![input];
    for (n, t) in store.iter() {
        names.push(n.to_string());
        point.push(Tensor::new(t.shape.clone(), t.values.clone()).expect("stored tensor"));
    }
    (names, point)
}

/// Contracts `out` with fixed random weights so every output coordinate
/// contributes a distinct gradient.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

fn run<R, F>(plan: &CheckPlan, rng: &mut R, mut make: F) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<GradCheckReport>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: Vec::new(),
    };
    for _ in 0..plan.points {
        report.merge(&make(rng)?);
    }
    Ok(report)
}

/// Heatmaps of `frames` frames through the embedding network.
pub fn check_embedding<R: Rng + ?Sized>(
    model: &PoseModel,
    frames: usize,
    plan: &CheckPlan,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let c = &model.config;
    let input_len = c.embedding.input_len(c.joints());
    run(plan, rng, |rng| {
        let store = model.init_params(rng)?;
        let x = uniform(&[frames, input_len], 0.0, 1.0, rng);
        let weights = uniform(&[frames, c.embedding.dim], -1.0, 1.0, rng);
        let (names, point) = with_params(x, store);
        let f = |g: &mut Graph, v: &[Var]| {
            let p = Bound::from_vars(&names, &v[1..]);
            let e = model.embed(g, &p, v[0])?;
            project(g, e, &weights)
        };
        grad_check(f, &point, plan.eps, plan.max_coords, rng)
    })
}

/// Embeddings of `frames ≥ T` frames through every temporal branch and the
/// output head.
pub fn check_temporal<R: Rng + ?Sized>(
    model: &PoseModel,
    frames: usize,
    plan: &CheckPlan,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let c = &model.config;
    let outputs = frames + 1 - c.tcn.window;
    run(plan, rng, |rng| {
        let store = model.init_params(rng)?;
        let x = uniform(&[frames, c.embedding.dim], 0.0, 1.0, rng);
        let weights = uniform(&[outputs, 3 * c.joints()], -1e-3, 1e-3, rng);
        let (names, point) = with_params(x, store);
        let f = |g: &mut Graph, v: &[Var]| {
            let p = Bound::from_vars(&names, &v[1..]);
            let y = model.temporal(g, &p, v[0])?;
            project(g, y, &weights)
        };
        grad_check(f, &point, plan.eps, plan.max_coords, rng)
    })
}

/// The whole generator, heatmaps to poses.
pub fn check_generator<R: Rng + ?Sized>(
    model: &PoseModel,
    frames: usize,
    plan: &CheckPlan,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let c = &model.config;
    let input_len = c.embedding.input_len(c.joints());
    let outputs = frames + 1 - c.tcn.window;
    run(plan, rng, |rng| {
        let store = model.init_params(rng)?;
        let x = uniform(&[frames, input_len], 0.0, 1.0, rng);
        let weights = uniform(&[outputs, 3 * c.joints()], -1e-3, 1e-3, rng);
        let (names, point) = with_params(x, store);
        let f = |g: &mut Graph, v: &[Var]| {
            let p = Bound::from_vars(&names, &v[1..]);
            let y = model.forward(g, &p, v[0])?;
            project(g, y, &weights)
        };
        grad_check(f, &point, plan.eps, plan.max_coords, rng)
    })
}

/// Binary cross-entropy of the discriminator on random pose sequences,
/// through the KCS features, convolutions and window pooling. The checked
/// input is expressed in units of the feature scale and multiplied back to
/// mm inside the function.
pub fn check_discriminator<R: Rng + ?Sized>(
    disc: &Discriminator,
    frames: usize,
    plan: &CheckPlan,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let k = disc.config.joints();
    let windows = frames / disc.config.discriminator.window;
    run(plan, rng, |rng| {
        let store = disc.init_params(rng)?;
        let x = uniform(&[frames, 3 * k], -1.5, 1.5, rng);
        let targets: Vec<f64> = (0..windows).map(|_| rng.random_range(0.0..1.0)).collect();
        let (names, point) = with_params(x, store);
        let f = |g: &mut Graph, v: &[Var]| {
            let p = Bound::from_vars(&names, &v[1..]);
            let mm = g.scale(v[0], disc.config.discriminator.feature_scale);
            let feats = disc.features(g, mm)?;
            let z = disc.logits(g, &p, feats)?;
            g.bce_with_logits(z, &targets)
        };
        grad_check(f, &point, plan.eps, plan.max_coords, rng)
    })
}
