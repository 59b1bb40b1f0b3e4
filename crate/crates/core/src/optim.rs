//! AdamW with decoupled weight decay, cosine annealing and global-norm
//! gradient clipping.

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learning rate at `step` of `total`: `lr_min + ½(lr0 − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(lr0: f64, lr_min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

/// Collected gradients in parameter visiting order; missing gradients are
/// zeros.
pub fn gradients<T: Scalar>(model: &dyn Module<T>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    model.visit("", &mut |_, p| {
        out.push(match p.grad() {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; p.numel()],
        })
    });
    out
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

impl AdamW {
    pub fn new<T: Scalar>(model: &dyn Module<T>, cfg: AdamWConfig) -> Self {
        let mut m = Vec::new();
        model.visit("", &mut |_, p| m.push(vec![0.0; p.numel()]));
        let v = m.clone();
        Self { cfg, m, v, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update with learning rate `lr`. Every parameter is replaced by a
    /// fresh leaf, which also clears its gradient.
    pub fn step<T: Scalar>(
        &mut self,
        model: &mut dyn Module<T>,
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "{} gradient groups for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let mut i = 0;
        let mut err = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_mut("", &mut |name, p| {
            let (m, v, g) = (&mut ms[i], &mut vs[i], &grads[i]);
            i += 1;
            if g.len() != p.numel() {
                err.get_or_insert_with(|| {
                    Error::dim(
                        "adamw",
                        format!("{name}: {} grads for {}", g.len(), p.numel()),
                    )
                });
                return;
            }
            let data: Vec<T> = p
                .data()
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                    let w = w.as_f64() * (1.0 - lr * c.weight_decay);
                    T::of(w - lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps))
                })
                .collect();
            *p = Tensor::param(data, p.shape()).expect("shape unchanged");
        });
        err.map_or(Ok(()), Err)
    }
}
