//! Central finite-difference verification of analytic gradients.
//!
//! Non-scalar outputs are reduced with a fixed random projection so every
//! output element participates. Small problems are checked coordinate by
//! coordinate; larger ones along random ±1 directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

mod suite;

pub use suite::{cases, corrupted_case, run_suite, GradCase, DEFAULT_CASES};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Acceptance bound on the relative error.
pub const REL_TOL: f64 = 1e-4;
/// Gradients with norm below this are compared in absolute terms.
const NORM_FLOOR: f64 = 1e-6;
/// Per-input errors are measured against at least this fraction of the
/// whole gradient's norm, so inputs with a vanishing gradient (a bias ahead
/// of a normalization) are not judged on rounding noise alone.
const TENSOR_FLOOR: f64 = 1e-2;
/// Inputs up to this many scalars are checked per coordinate.
const COORDINATE_LIMIT: usize = 400;
const DIRECTIONS: usize = 3;

fn projection(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 1 {
        vec![1.0]
    } else {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

fn project(out: &Tensor<f64>, weights: &[f64]) -> f64 {
    out.data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

fn rel_err(diff: f64, scale_a: f64, scale_b: f64) -> f64 {
    diff / scale_a.max(scale_b).max(NORM_FLOOR)
}

/// Largest relative error between analytic and central-difference
/// gradients of `f` at `inputs`, over every input.
pub fn check<F>(f: F, inputs: &[Tensor<f64>], seed: u64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    check_with_step(f, inputs, seed, FD_STEP)
}

/// [`check`] with an explicit difference step.
pub fn check_with_step<F>(f: F, inputs: &[Tensor<f64>], seed: u64, step: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.to_leaf(true)).collect();
    let out = f(&leaves)?;
    if !out.all_finite() {
        return Err(Error::Numeric(
            "non-finite forward output in gradient check".into(),
        ));
    }
    let weights = projection(out.numel(), &mut rng);
    let w = Tensor::new(weights.clone(), out.shape())?;
    out.mul(&w)?.sum().backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let ts = values
            .iter()
            .zip(inputs)
            .map(|(v, t)| Tensor::new(v.clone(), t.shape()))
            .collect::<Result<Vec<_>>>()?;
        Ok(project(&f(&ts)?, &weights))
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().to_vec()).collect();
    let total: usize = inputs.iter().map(Tensor::numel).sum();

    let global = analytic.iter().flatten().map(|a| a * a).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    if total <= COORDINATE_LIMIT {
        for (ti, t) in inputs.iter().enumerate() {
            let mut numeric = vec![0.0; t.numel()];
            for (j, slot) in numeric.iter_mut().enumerate() {
                let mut plus = base.clone();
                plus[ti][j] += step;
                let mut minus = base.clone();
                minus[ti][j] -= step;
                *slot = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            }
            let diff: f64 = analytic[ti]
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let na = analytic[ti].iter().map(|a| a * a).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(rel_err(diff, na.max(TENSOR_FLOOR * global), nn));
        }
    } else {
        for _ in 0..DIRECTIONS {
            let dirs: Vec<Vec<f64>> = base
                .iter()
                .map(|v| {
                    v.iter()
                        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                        .collect()
                })
                .collect();
            let shifted = |sign: f64| -> Vec<Vec<f64>> {
                base.iter()
                    .zip(&dirs)
                    .map(|(v, d)| {
                        v.iter()
                            .zip(d)
                            .map(|(x, dx)| x + sign * step * dx)
                            .collect()
                    })
                    .collect()
            };
            let numeric = (eval(&shifted(1.0))? - eval(&shifted(-1.0))?) / (2.0 * step);
            let directional: f64 = analytic
                .iter()
                .zip(&dirs)
                .map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            // A ±1 direction gives a derivative of typical size ‖g‖.
            worst = worst.max(rel_err(
                (directional - numeric).abs(),
                directional.abs().max(global),
                numeric.abs(),
            ));
        }
    }
    Ok(worst)
}

/// Result of checking one operation over several seeded cases.
#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub failure: Option<String>,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_err < REL_TOL
    }
}

/// Runs `case(seed)` for `cases` seeds and folds the errors into a report.
pub fn run_cases<F>(op: &str, cases: usize, mut case: F) -> OpReport
where
    F: FnMut(u64) -> Result<f64>,
{
    let mut report = OpReport {
        op: op.to_string(),
        cases,
        max_rel_err: 0.0,
        failure: None,
    };
    for seed in 0..cases as u64 {
        match case(seed) {
            Ok(e) if e.is_finite() => report.max_rel_err = report.max_rel_err.max(e),
            Ok(e) => {
                report.failure = Some(format!("seed {seed}: non-finite error {e}"));
                break;
            }
            Err(e) => {
                report.failure = Some(format!("seed {seed}: {e}"));
                break;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GradArgs;

    #[test]
    fn exact_gradient_passes() {
        let x = Tensor::new(vec![0.3, -1.2, 2.0], &[3]).unwrap();
        let e = check(|t| Ok(t[0].square().sum()), &[x], 1).unwrap();
        assert!(e < 1e-8, "{e}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // Forward is x², backward claims 3x.
        let bad = |t: &[Tensor<f64>]| -> Result<Tensor<f64>> {
            let x = &t[0];
            let data = x.data().iter().map(|v| v * v).collect();
            Ok(Tensor::from_op(
                data,
                x.shape().to_vec(),
                vec![x.clone()],
                Box::new(|a: &GradArgs<'_, f64>| {
                    let x = a.inputs[0].data();
                    vec![Some(
                        a.grad.iter().zip(x).map(|(g, v)| g * 3.0 * v).collect(),
                    )]
                }),
            ))
        };
        let x = Tensor::new(vec![0.5, -0.7], &[2]).unwrap();
        assert!(check(bad, &[x], 0).unwrap() > REL_TOL);
    }
}
