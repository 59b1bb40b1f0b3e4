//! Segmentation and contour losses.
//!
//! * class-weighted binary cross-entropy on logits,
//! * Lovász hinge: the Lovász extension of the Jaccard loss evaluated on
//!   hinge errors of signed margins,
//! * symmetric chamfer distance between vertex sets (mean per vertex),
//! * their weighted combination with an optional auxiliary term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid, GradArgs, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;
/// Bounds on the foreground fraction used for class weights.
const FRACTION_FLOOR: f64 = 0.05;

fn logit_bound() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_labels<T: Scalar>(op: &'static str, n: usize, y: &[T]) -> Result<()> {
    if n != y.len() {
        return Err(Error::dim(
            op,
            format!("{n} predictions vs {} labels", y.len()),
        ));
    }
    if y.iter().any(|v| *v != T::zero() && *v != T::one()) {
        return Err(Error::Parameter(format!("{op}: labels must be 0 or 1")));
    }
    Ok(())
}

/// Inverse-frequency class weights normalized so that `ω_pos + ω_neg = 2`.
///
/// Returns `(ω_pos, ω_neg)`. The foreground fraction is clamped to
/// [0.05, 0.95] so that single-class batches keep both weights positive.
pub fn class_weights<T: Scalar>(labels: &[T]) -> (f64, f64) {
    if labels.is_empty() {
        return (1.0, 1.0);
    }
    let pos = labels.iter().filter(|v| **v > T::of(0.5)).count() as f64;
    let f = (pos / labels.len() as f64).clamp(FRACTION_FLOOR, 1.0 - FRACTION_FLOOR);
    (2.0 * (1.0 - f), 2.0 * f)
}

/// `−(1/N) Σ [ω_pos y log σ(z) + ω_neg (1−y) log(1−σ(z))]` on logits `z`,
/// with σ(z) clamped to [1e-7, 1−1e-7].
pub fn weighted_bce_logits<T: Scalar>(
    z: &Tensor<T>,
    y: &[T],
    w_pos: f64,
    w_neg: f64,
) -> Result<Tensor<T>> {
    check_labels("weighted_bce", z.numel(), y)?;
    if w_pos < 0.0 || w_neg < 0.0 {
        return Err(Error::Parameter("class weights must be nonnegative".into()));
    }
    let n = z.numel().max(1) as f64;
    let bound = logit_bound();
    let yv: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    let value: f64 = z
        .data()
        .iter()
        .zip(&yv)
        .map(|(zi, yi)| {
            let zc = zi.as_f64().clamp(-bound, bound);
            w_pos * yi * softplus(-zc) + w_neg * (1.0 - yi) * softplus(zc)
        })
        .sum::<f64>()
        / n;
    Ok(Tensor::from_op(
        vec![T::of(value)],
        vec![1],
        vec![z.clone()],
        Box::new(move |a: &GradArgs<'_, T>| {
            let g = a.grad[0].as_f64() / n;
            let grad = a.inputs[0]
                .data()
                .iter()
                .zip(&yv)
                .map(|(zi, yi)| {
                    let z = zi.as_f64();
                    if z.abs() >= bound {
                        return T::zero();
                    }
                    let d = -w_pos * yi * sigmoid(-z) + w_neg * (1.0 - yi) * sigmoid(z);
                    T::of(g * d)
                })
                .collect();
            vec![Some(grad)]
        }),
    ))
}

/// Weighted cross-entropy on probabilities (clamped); not differentiable.
pub fn weighted_bce<T: Scalar>(p: &[T], y: &[T], w_pos: f64, w_neg: f64) -> Result<T> {
    check_labels("weighted_bce", p.len(), y)?;
    let n = p.len().max(1) as f64;
    let s: f64 = p
        .iter()
        .zip(y)
        .map(|(pi, yi)| {
            let p = pi.as_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let y = yi.as_f64();
            w_pos * y * p.ln() + w_neg * (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(T::of(-s / n))
}

/// Permutation sorting hinge errors in descending order (stable) and the
/// Jaccard-loss increments along it.
fn lovasz_terms(errors: &[f64], y: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| {
        errors[b]
            .partial_cmp(&errors[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let gts: f64 = y.iter().sum();
    let mut grad = Vec::with_capacity(order.len());
    let (mut fg_seen, mut bg_seen) = (0.0, 0.0);
    let mut prev = 0.0;
    for &i in &order {
        if y[i] > 0.5 {
            fg_seen += 1.0;
        } else {
            bg_seen += 1.0;
        }
        let jac = 1.0 - (gts - fg_seen) / (gts + bg_seen);
        grad.push(jac - prev);
        prev = jac;
    }
    (order, grad)
}

/// Lovász hinge of signed margins `s` (positive = terrace) against binary
/// labels. Zero when there is no foreground pixel.
pub fn lovasz_hinge<T: Scalar>(s: &Tensor<T>, y: &[T]) -> Result<Tensor<T>> {
    check_labels("lovasz_hinge", s.numel(), y)?;
    let yv: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    if !yv.iter().any(|v| *v > 0.5) {
        return Ok(Tensor::from_op(
            vec![T::zero()],
            vec![1],
            vec![s.clone()],
            Box::new(|_| vec![None]),
        ));
    }
    let signs: Vec<f64> = yv.iter().map(|v| 2.0 * v - 1.0).collect();
    let errors: Vec<f64> = s
        .data()
        .iter()
        .zip(&signs)
        .map(|(si, sg)| 1.0 - si.as_f64() * sg)
        .collect();
    let (order, jgrad) = lovasz_terms(&errors, &yv);
    let value: f64 = order
        .iter()
        .zip(&jgrad)
        .map(|(&i, g)| errors[i].max(0.0) * g)
        .sum();
    Ok(Tensor::from_op(
        vec![T::of(value)],
        vec![1],
        vec![s.clone()],
        Box::new(move |a: &GradArgs<'_, T>| {
            let g = a.grad[0].as_f64();
            let mut grad = vec![T::zero(); errors.len()];
            for (&i, jg) in order.iter().zip(&jgrad) {
                if errors[i] > 0.0 {
                    grad[i] = T::of(-g * jg * signs[i]);
                }
            }
            vec![Some(grad)]
        }),
    ))
}

fn nearest(p: (f64, f64), set: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in set.iter().enumerate() {
        let d = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn points<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<Vec<(f64, f64)>> {
    match t.shape() {
        [n, 2] if *n > 0 => Ok(t
            .data()
            .chunks(2)
            .map(|c| (c[0].as_f64(), c[1].as_f64()))
            .collect()),
        [0, 2] => Err(Error::Contract(format!("{op}: empty vertex set"))),
        s => Err(Error::dim(op, format!("expected n×2 vertices, got {s:?}"))),
    }
}

/// Symmetric chamfer distance between two n×2 vertex sets, each direction
/// averaged per vertex. Nearest-neighbour ties go to the lowest index.
pub fn chamfer<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let pa = points("chamfer", a)?;
    let pb = points("chamfer", b)?;
    let ab: Vec<(usize, f64)> = pa.iter().map(|p| nearest(*p, &pb)).collect();
    let ba: Vec<(usize, f64)> = pb.iter().map(|p| nearest(*p, &pa)).collect();
    let (na, nb) = (pa.len() as f64, pb.len() as f64);
    let value = ab.iter().map(|x| x.1).sum::<f64>() / na + ba.iter().map(|x| x.1).sum::<f64>() / nb;
    Ok(Tensor::from_op(
        vec![T::of(value)],
        vec![1],
        vec![a.clone(), b.clone()],
        Box::new(move |args: &GradArgs<'_, T>| {
            let g = args.grad[0].as_f64();
            let mut ga = vec![0.0; pa.len() * 2];
            let mut gb = vec![0.0; pb.len() * 2];
            let pair = |i: usize, j: usize, w: f64, ga: &mut [f64], gb: &mut [f64]| {
                let dx = pa[i].0 - pb[j].0;
                let dy = pa[i].1 - pb[j].1;
                ga[2 * i] += 2.0 * w * dx;
                ga[2 * i + 1] += 2.0 * w * dy;
                gb[2 * j] -= 2.0 * w * dx;
                gb[2 * j + 1] -= 2.0 * w * dy;
            };
            for (i, (j, _)) in ab.iter().enumerate() {
                pair(i, *j, g / na, &mut ga, &mut gb);
            }
            for (j, (i, _)) in ba.iter().enumerate() {
                pair(*i, j, g / nb, &mut ga, &mut gb);
            }
            let conv = |v: Vec<f64>| v.into_iter().map(T::of).collect();
            vec![
                args.needs(0).then(|| conv(ga)),
                args.needs(1).then(|| conv(gb)),
            ]
        }),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Lovász weight.
    pub gamma: f64,
    /// Chamfer weight.
    pub theta: f64,
    /// Auxiliary soft-region weight; 0 disables the term.
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            theta: 0.1,
            aux: 0.4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.gamma, self.theta, self.aux]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss weights must be finite and nonnegative: {self:?}"
            )))
        }
    }
}

/// Per-component values of one loss evaluation, already weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub aux: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.l1 += s * other.l1;
        self.l2 += s * other.l2;
        self.l3 += s * other.l3;
        self.aux += s * other.aux;
        self.total += s * other.total;
    }
}

/// Terrace-minus-background margin of a 2×H×W logit map, flattened.
pub fn margin<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    match logits.shape() {
        [2, h, w] => logits
            .slice0(1, 2)?
            .sub(&logits.slice0(0, 1)?)?
            .reshape(&[h * w]),
        s => Err(Error::dim(
            "margin",
            format!("expected 2×H×W logits, got {s:?}"),
        )),
    }
}

/// Predicted contour paired with its reference polygon for the chamfer term.
pub struct ContourPair<T: Scalar> {
    /// x×2 evolved vertices.
    pub predicted: Tensor<T>,
    /// Reference vertices, m×2 (constant).
    pub reference: Tensor<T>,
}

/// `L1 + γ·L2 + θ·L3 + aux·L_aux` for one tile. `L3` averages the chamfer
/// distance over the supplied pairs and is zero when there are none; the
/// auxiliary term uses the same class weights as `L1`.
pub fn total_loss<T: Scalar>(
    logits: &Tensor<T>,
    aux_logits: Option<&Tensor<T>>,
    contours: &[ContourPair<T>],
    labels: &[T],
    class_w: (f64, f64),
    w: &LossWeights,
) -> Result<(Tensor<T>, LossBreakdown)> {
    w.validate()?;
    let m = margin(logits)?;
    let l1 = weighted_bce_logits(&m, labels, class_w.0, class_w.1)?;
    let l2 = lovasz_hinge(&m, labels)?.scale(T::of(w.gamma));
    let mut total = l1.add(&l2)?;
    let mut br = LossBreakdown {
        l1: l1.item().as_f64(),
        l2: l2.item().as_f64(),
        ..Default::default()
    };
    if !contours.is_empty() && w.theta > 0.0 {
        let mut acc: Option<Tensor<T>> = None;
        for c in contours {
            let d = chamfer(&c.predicted, &c.reference)?;
            acc = Some(match acc {
                None => d,
                Some(a) => a.add(&d)?,
            });
        }
        let l3 = acc
            .expect("non-empty")
            .scale(T::of(w.theta / contours.len() as f64));
        br.l3 = l3.item().as_f64();
        total = total.add(&l3)?;
    }
    if let Some(aux) = aux_logits.filter(|_| w.aux > 0.0) {
        let la =
            weighted_bce_logits(&margin(aux)?, labels, class_w.0, class_w.1)?.scale(T::of(w.aux));
        br.aux = la.item().as_f64();
        total = total.add(&la)?;
    }
    br.total = total.item().as_f64();
    Ok((total, br))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn bce_direct_example() {
        let got = weighted_bce(&[0.8, 0.3], &[1.0, 0.0], 1.0, 1.0).unwrap();
        let expect = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((got - expect).abs() < 1e-15);
        let z = t(&[(0.8f64 / 0.2).ln(), (0.3f64 / 0.7).ln()]);
        let via_logits = weighted_bce_logits(&z, &[1.0, 0.0], 1.0, 1.0)
            .unwrap()
            .item();
        assert!((via_logits - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let y = [1.0, 0.0, 1.0];
        assert!(weighted_bce(&y, &y, 1.0, 1.0).unwrap() <= 1e-6);
        let z = t(&[40.0, -40.0, 40.0]);
        assert!(weighted_bce_logits(&z, &y, 1.3, 0.7).unwrap().item() <= 1e-6);
    }

    #[test]
    fn bce_zero_positive_weight_ignores_positives() {
        let a = weighted_bce(&[0.1, 0.6], &[1.0, 0.0], 0.0, 1.0).unwrap();
        let b = weighted_bce(&[0.9, 0.6], &[1.0, 0.0], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bce_shape_mismatch() {
        assert!(matches!(
            weighted_bce_logits(&t(&[0.0, 1.0]), &[1.0], 1.0, 1.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn class_weights_sum_to_two() {
        let (p, n) = class_weights(&[1.0, 0.0, 0.0, 0.0]);
        assert!((p + n - 2.0).abs() < 1e-15);
        assert!((p - 1.5).abs() < 1e-15);
        let (p, n) = class_weights(&[0.0f64; 10]);
        assert!(p > 0.0 && n > 0.0);
    }

    #[test]
    fn lovasz_zero_for_confident_correct_margins() {
        let y = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(
            lovasz_hinge(&t(&[2.0, -2.0, 2.0, -2.0]), &y)
                .unwrap()
                .item(),
            0.0
        );
        assert_eq!(lovasz_hinge(&t(&[2.0; 4]), &[1.0; 4]).unwrap().item(), 0.0);
        assert_eq!(
            lovasz_hinge(&t(&[0.3, -1.0]), &[0.0, 0.0]).unwrap().item(),
            0.0
        );
    }

    #[test]
    fn lovasz_single_wrong_pixel() {
        // One foreground pixel with margin 0: error 1, Jaccard increment 1.
        assert!((lovasz_hinge(&t(&[0.0, -3.0]), &[1.0, 0.0]).unwrap().item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chamfer_examples() {
        let a = Tensor::new(vec![0.0, 0.0], &[1, 2]).unwrap();
        let b = Tensor::new(vec![3.0, 4.0], &[1, 2]).unwrap();
        assert_eq!(chamfer(&a, &b).unwrap().item(), 50.0);
        let sq = Tensor::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0], &[4, 2]).unwrap();
        assert_eq!(chamfer(&sq, &sq).unwrap().item(), 0.0);
        let empty = Tensor::<f64>::zeros(&[0, 2]);
        assert!(chamfer(&sq, &empty).is_err());
    }

    #[test]
    fn total_components_sum() {
        let logits =
            Tensor::new(vec![0.2, -0.1, 0.5, 1.0, 0.3, 0.4, -0.2, 0.0], &[2, 2, 2]).unwrap();
        let aux = logits.scale(0.5);
        let y = [1.0, 0.0, 0.0, 1.0];
        let pair = ContourPair {
            predicted: Tensor::new(vec![0.0, 0.0, 1.0, 0.5], &[2, 2]).unwrap(),
            reference: Tensor::new(vec![0.1, 0.2], &[1, 2]).unwrap(),
        };
        let w = LossWeights::default();
        let (total, br) =
            total_loss(&logits, Some(&aux), &[pair], &y, class_weights(&y), &w).unwrap();
        assert!((br.l1 + br.l2 + br.l3 + br.aux - br.total).abs() < 1e-12);
        assert_eq!(total.item(), br.total);
        let w0 = LossWeights {
            gamma: 0.0,
            theta: 0.0,
            aux: 0.0,
        };
        let (_, b0) = total_loss(&logits, Some(&aux), &[], &y, (1.0, 1.0), &w0).unwrap();
        assert_eq!(b0.total, b0.l1);
    }
}
