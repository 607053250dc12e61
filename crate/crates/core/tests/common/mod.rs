#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use postcn_core::kcs::KcsRowOp;
use postcn_core::losses::{graph_loss_2d, rotate_poses, CameraRotation, OrthoProjection};
use postcn_core::model::{DiscriminatorConfig, EmbeddingConfig, ModelConfig, TcnConfig};
use postcn_core::nn::{grad_check, GradCheckReport, Graph, Tensor, Var, DEFAULT_STEP};
use postcn_core::{Pose3D, SkeletonTopology};

pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, k: usize, spread: f64) -> Pose3D {
    Pose3D::new(
        (0..k)
            .map(|_| {
                [
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                ]
            })
            .collect(),
    )
}

/// Uniformly distributed rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> CameraRotation {
    let q: Vec<f64> = (0..4).map(|_| StandardNormal.sample(rng)).collect();
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    CameraRotation::from_rows([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
    .expect("unit quaternion gives a rotation")
}

pub fn tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Full-size topology with tiny layers, so whole-network gradient checks
/// stay fast while keeping five temporal branches.
pub fn small_model() -> ModelConfig {
    ModelConfig {
        topology: SkeletonTopology::h36m(),
        embedding: EmbeddingConfig {
            resolution: [16, 16],
            pool_stride: 4,
            dim: 8,
        },
        tcn: TcnConfig {
            strides: vec![1, 2, 3, 5, 7],
            window: 16,
            channels: 4,
            ..TcnConfig::default()
        },
        discriminator: DiscriminatorConfig {
            hidden: vec![6, 6, 6],
            ..DiscriminatorConfig::default()
        },
    }
}

/// Scalar probe `Σ w ⊙ v` with fixed weights, so each output coordinate
/// gets its own gradient.
fn probe(g: &mut Graph, v: Var, weights: &Tensor) -> postcn_core::Result<Var> {
    let w = g.constant(weights.clone());
    let m = g.mul(v, w)?;
    Ok(g.sum(m))
}

type Case = (&'static str, GradCheckReport);

/// Gradient checks of every differentiable primitive of the graph, each at
/// `points` random points.
pub fn primitive_checks<R: Rng + ?Sized>(points: usize, rng: &mut R) -> Vec<Case> {
    const EPS: f64 = DEFAULT_STEP;
    let topo = SkeletonTopology::h36m();
    let kcs = Arc::new(KcsRowOp::new(&topo));
    let projection = Arc::new(OrthoProjection::for_topology(&topo));
    let mut out: Vec<Case> = Vec::new();

    macro_rules! case {
        ($name:expr, [$($shape:expr => ($lo:expr, $hi:expr)),+], $out_shape:expr, |$g:ident, $v:ident| $body:expr) => {{
            let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, excluded: Vec::new() };
            for _ in 0..points {
                let point = vec![$(tensor(rng, &$shape, $lo, $hi)),+];
                let weights = tensor(rng, &$out_shape, -1.0, 1.0);
                let f = |$g: &mut Graph, $v: &[Var]| -> postcn_core::Result<Var> {
                    let y: Var = $body?;
                    probe($g, y, &weights)
                };
                report.merge(&grad_check(f, &point, EPS, None, rng).unwrap());
            }
            out.push(($name, report));
        }};
    }

    case!("matmul", [[4, 3] => (-1.0, 1.0), [3, 5] => (-1.0, 1.0)], [4, 5], |g, v| g.matmul(v[0], v[1]));
    case!("add", [[3, 4] => (-1.0, 1.0), [3, 4] => (-1.0, 1.0)], [3, 4], |g, v| g.add(v[0], v[1]));
    case!("sub", [[3, 4] => (-1.0, 1.0), [3, 4] => (-1.0, 1.0)], [3, 4], |g, v| g.sub(v[0], v[1]));
    case!("mul", [[3, 4] => (-1.0, 1.0), [3, 4] => (-1.0, 1.0)], [3, 4], |g, v| g.mul(v[0], v[1]));
    case!("scale", [[3, 4] => (-1.0, 1.0)], [3, 4], |g, v| Ok::<_, postcn_core::Error>(g.scale(v[0], -1.7)));
    case!("relu", [[3, 4] => (-1.0, 1.0)], [3, 4], |g, v| Ok::<_, postcn_core::Error>(g.relu(v[0])));
    case!("leaky_relu", [[3, 4] => (-1.0, 1.0)], [3, 4], |g, v| Ok::<_, postcn_core::Error>(g.leaky_relu(v[0], 0.2)));
    case!("sigmoid", [[3, 4] => (-4.0, 4.0)], [3, 4], |g, v| Ok::<_, postcn_core::Error>(g.sigmoid(v[0])));
    case!("square", [[3, 4] => (-1.0, 1.0)], [3, 4], |g, v| Ok::<_, postcn_core::Error>(g.square(v[0])));
    case!("sum", [[3, 4] => (-1.0, 1.0)], [0usize; 0], |g, v| Ok::<_, postcn_core::Error>(g.sum(v[0])));
    case!("mean", [[3, 4] => (-1.0, 1.0)], [0usize; 0], |g, v| Ok::<_, postcn_core::Error>(g.mean(v[0])));
    case!("mse", [[3, 4] => (-1.0, 1.0), [3, 4] => (-1.0, 1.0)], [0usize; 0], |g, v| g.mse(v[0], v[1]));
    case!("add_row_vector", [[3, 4] => (-1.0, 1.0), [4] => (-1.0, 1.0)], [3, 4], |g, v| g.add_row_vector(v[0], v[1]));
    case!(
        "dense",
        [[3, 4] => (-1.0, 1.0), [4, 5] => (-1.0, 1.0), [5] => (-1.0, 1.0)],
        [3, 5],
        |g, v| g.dense(v[0], v[1], v[2])
    );
    case!(
        "conv1d",
        [[3, 12] => (-1.0, 1.0), [2, 3, 3] => (-1.0, 1.0), [2] => (-1.0, 1.0)],
        [2, 8],
        |g, v| g.conv1d(v[0], v[1], Some(v[2]), 2)
    );
    case!(
        "conv1d_no_bias",
        [[3, 9] => (-1.0, 1.0), [4, 3, 1] => (-1.0, 1.0)],
        [4, 9],
        |g, v| g.conv1d(v[0], v[1], None, 1)
    );
    case!("slice_cols", [[3, 6] => (-1.0, 1.0)], [3, 3], |g, v| g.slice_cols(v[0], 2, 3));
    case!("slice_rows", [[5, 2] => (-1.0, 1.0)], [2, 2], |g, v| g.slice_rows(v[0], 1, 2));
    case!(
        "concat_cols",
        [[3, 2] => (-1.0, 1.0), [3, 4] => (-1.0, 1.0)],
        [3, 6],
        |g, v| g.concat_cols(&[v[0], v[1]])
    );
    case!(
        "concat_rows",
        [[2, 3] => (-1.0, 1.0), [4, 3] => (-1.0, 1.0)],
        [6, 3],
        |g, v| g.concat_rows(&[v[0], v[1]])
    );
    case!("gather_rows", [[4, 3] => (-1.0, 1.0)], [5, 3], |g, v| g.gather_rows(v[0], &[3, 0, 3, 1, 3]));
    case!("transpose", [[3, 5] => (-1.0, 1.0)], [5, 3], |g, v| g.transpose(v[0]));
    case!("reshape", [[3, 4] => (-1.0, 1.0)], [6, 2], |g, v| g.reshape(v[0], &[6, 2]));
    case!(
        "depthwise_pool2d",
        [[2, 2 * 4 * 4] => (0.0, 1.0), [2, 4] => (-1.0, 1.0), [2] => (-1.0, 1.0)],
        [2, 2 * 2 * 2],
        |g, v| g.depthwise_pool2d(v[0], v[1], v[2], 2, (4, 4), 2)
    );
    case!("kcs_row_map", [[3, 51] => (-2.0, 2.0)], [3, 136], |g, v| g.row_map(v[0], kcs.clone()));
    case!(
        "orthographic_row_map",
        [[3, 51] => (-500.0, 500.0)],
        [3, 34],
        |g, v| g.row_map(v[0], projection.clone())
    );
    case!("rotate_poses", [[3, 51] => (-1.0, 1.0)], [3, 51], |g, v| {
        let r = postcn_core::losses::rotation_matrix(0.3, -1.1, 0.2);
        rotate_poses(g, v[0], &r)
    });

    let mut bce = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: Vec::new(),
    };
    let mut loss2d = bce.clone();
    for _ in 0..points {
        let z = tensor(rng, &[6], -4.0, 4.0);
        let targets: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = |g: &mut Graph, v: &[Var]| g.bce_with_logits(v[0], &targets);
        bce.merge(&grad_check(f, &[z], EPS, None, rng).unwrap());

        let poses = tensor(rng, &[3, 51], -500.0, 500.0);
        let targets: Vec<f64> = (0..3 * 34).map(|_| rng.random_range(0.0..64.0)).collect();
        let mask: Vec<f64> = (0..3 * 34)
            .map(|i| if (i / 2) % 5 == 3 { 0.0 } else { 1.0 })
            .collect();
        let f = |g: &mut Graph, v: &[Var]| graph_loss_2d(g, v[0], &targets, &mask, &projection);
        loss2d.merge(&grad_check(f, &[poses], EPS, None, rng).unwrap());
    }
    out.push(("bce_with_logits", bce));
    out.push(("loss_2d", loss2d));
    out
}

/// Euclidean distance by explicit loops.
pub fn naive_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

pub fn naive_mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for f in 0..pred.len() {
        for j in 0..pred[f].coords.len() {
            sum += naive_dist(pred[f].coords[j], gt[f].coords[j]);
            n += 1;
        }
    }
    sum / n as f64
}

pub fn naive_pck(pred: &[Pose3D], gt: &[Pose3D], threshold: f64) -> f64 {
    let mut hit = 0;
    let mut n = 0;
    for f in 0..pred.len() {
        for j in 0..pred[f].coords.len() {
            if naive_dist(pred[f].coords[j], gt[f].coords[j]) < threshold {
                hit += 1;
            }
            n += 1;
        }
    }
    100.0 * hit as f64 / n as f64
}

/// Mean arccos of the cosine between predicted and true bone directions.
pub fn naive_mae(pred: &[Pose3D], gt: &[Pose3D], topology: &SkeletonTopology) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for f in 0..pred.len() {
        for &(a, b) in &topology.bones {
            let mut u = [0.0; 3];
            let mut v = [0.0; 3];
            for i in 0..3 {
                u[i] = pred[f].coords[b][i] - pred[f].coords[a][i];
                v[i] = gt[f].coords[b][i] - gt[f].coords[a][i];
            }
            let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            sum += (dot / (nu * nv)).clamp(-1.0, 1.0).acos();
            n += 1;
        }
    }
    sum / n as f64
}
