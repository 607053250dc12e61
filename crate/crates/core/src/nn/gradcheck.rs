//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`,
    /// where `floor` is [`TENSOR_FLOOR`] times the largest analytic gradient
    /// of the same tensor (at least `1e-8`).
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, coordinate)` pairs where the one-sided differences disagree,
    /// i.e. the function has a kink within `eps`. Not counted in the error.
    pub excluded: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.excluded.extend_from_slice(&other.excluded);
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    relative_error_with_floor(a, b, 1e-8)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error_with_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Coordinates whose gradient is this small relative to the largest one in
/// the same tensor are compared against that fraction of the largest.
pub const TENSOR_FLOOR: f64 = 1e-3;

/// Relative step balancing truncation and round-off error of a central
/// difference, about the cube root of the f64 machine epsilon.
pub const DEFAULT_STEP: f64 = 6e-6;

fn eval<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares reverse-mode gradients of the scalar `f` at `point` against
/// `(f(x+h) − f(x−h)) / (2·h)`, coordinate by coordinate, with the step
/// `h = eps·max(1, |x|)` relative to the coordinate's magnitude.
///
/// With `max_coords = Some(n)`, at most `n` randomly chosen coordinates per
/// input tensor are checked.
pub fn grad_check<F, R>(
    f: F,
    point: &[Tensor],
    eps: f64,
    max_coords: Option<usize>,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let base = g.value(out).item();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: Vec::new(),
    };
    let mut work = point.to_vec();
    for (i, t) in point.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        let largest = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let floor = (TENSOR_FLOOR * largest).max(1e-8);
        let coords: Vec<usize> = match max_coords {
            Some(n) if n < t.len() => sample(rng, t.len(), n).into_vec(),
            _ => (0..t.len()).collect(),
        };
        for c in coords {
            let x0 = t.values[c];
            let h = eps * x0.abs().max(1.0);
            work[i].values[c] = x0 + h;
            let fp = eval(&f, &work)?;
            work[i].values[c] = x0 - h;
            let fm = eval(&f, &work)?;
            work[i].values[c] = x0;

            let fwd = (fp - base) / h;
            let bwd = (base - fm) / h;
            if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + 1e-6 {
                report.excluded.push((i, c));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            report.max_rel_error =
                report
                    .max_rel_error
                    .max(relative_error_with_floor(analytic[c], numeric, floor));
            report.checked += 1;
        }
    }
    Ok(report)
}
