//! Parameter containers and the small layer vocabulary shared by the
//! network modules.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seedable generator used for weight initialization and dropout.
pub type ModelRng = ChaCha8Rng;

/// Anything that owns named trainable tensors.
///
/// Visiting order is fixed by the implementation and defines the order of
/// parameters in checkpoints and optimizer state.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Replaces every parameter, in visiting order.
    fn set_parameters(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut i = 0;
        let mut err = None;
        self.visit_mut("", &mut |name, t| {
            match values.get(i) {
                Some(v) if v.shape() == t.shape() => *t = v.clone(),
                Some(v) => {
                    err.get_or_insert_with(|| {
                        Error::dim(
                            "set_parameters",
                            format!("{name}: {:?} vs {:?}", v.shape(), t.shape()),
                        )
                    });
                }
                None => {
                    err.get_or_insert_with(|| Error::Contract(format!("missing value for {name}")));
                }
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if i != values.len() {
            return Err(Error::Contract(format!(
                "{} values for {i} parameters",
                values.len()
            )));
        }
        Ok(())
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform initialization in ±gain·√(3/fan_in) (unit variance for gain 1).
pub fn init_uniform<T: Scalar>(
    rng: &mut ModelRng,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> Tensor<T> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(data, shape).expect("init shape is non-empty")
}

pub fn init_const<T: Scalar>(shape: &[usize], v: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::param(vec![T::of(v); n], shape).expect("init shape is non-empty")
}

/// Gain for layers followed by ReLU.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// 1×1 convolution with bias.
#[derive(Clone, Debug)]
pub struct Pointwise<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Pointwise<T> {
    pub fn new(rng: &mut ModelRng, c_in: usize, c_out: usize, gain: f64) -> Self {
        Self {
            weight: init_uniform(rng, &[c_out, c_in], c_in, gain),
            bias: init_const(&[c_out], 0.0),
        }
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: init_const(&[c_out, c_in], 0.0),
            bias: init_const(&[c_out], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv1x1(&self.weight, Some(&self.bias))
    }
}

impl<T: Scalar> Module<T> for Pointwise<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(p, "weight"), &self.weight);
        f(&join(p, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(p, "weight"), &mut self.weight);
        f(&join(p, "bias"), &mut self.bias);
    }
}

/// Per-channel normalization with learned affine.
#[derive(Clone, Debug)]
pub struct Norm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub const NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Norm<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: init_const(&[c], 1.0),
            beta: init_const(&[c], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.batch_norm(&self.gamma, &self.beta, NORM_EPS)
    }
}

impl<T: Scalar> Module<T> for Norm<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(p, "gamma"), &self.gamma);
        f(&join(p, "beta"), &self.beta);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(p, "gamma"), &mut self.gamma);
        f(&join(p, "beta"), &mut self.beta);
    }
}

/// 1×1 convolution (no bias), normalization, ReLU.
#[derive(Clone, Debug)]
pub struct PointwiseNormRelu<T: Scalar> {
    pub weight: Tensor<T>,
    pub norm: Norm<T>,
}

impl<T: Scalar> PointwiseNormRelu<T> {
    pub fn new(rng: &mut ModelRng, c_in: usize, c_out: usize) -> Self {
        Self {
            weight: init_uniform(rng, &[c_out, c_in], c_in, RELU_GAIN),
            norm: Norm::new(c_out),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv1x1_bn_relu(&self.weight, &self.norm.gamma, &self.norm.beta)
    }
}

impl<T: Scalar> Module<T> for PointwiseNormRelu<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(p, "weight"), &self.weight);
        self.norm.visit(&join(p, "norm"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(p, "weight"), &mut self.weight);
        self.norm.visit_mut(&join(p, "norm"), f);
    }
}

/// 3×3 convolution (no bias) with zero padding 1, followed by normalization
/// and an optional ReLU.
#[derive(Clone, Debug)]
pub struct Conv3x3Norm<T: Scalar> {
    pub weight: Tensor<T>,
    pub norm: Norm<T>,
    pub stride: usize,
    pub relu: bool,
}

impl<T: Scalar> Conv3x3Norm<T> {
    pub fn new(rng: &mut ModelRng, c_in: usize, c_out: usize, stride: usize, relu: bool) -> Self {
        let gain = if relu { RELU_GAIN } else { 1.0 };
        Self {
            weight: init_uniform(rng, &[c_out, c_in, 3, 3], c_in * 9, gain),
            norm: Norm::new(c_out),
            stride,
            relu,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .norm
            .forward(&x.conv2d(&self.weight, None, self.stride, 1)?)?;
        Ok(if self.relu { y.relu() } else { y })
    }
}

impl<T: Scalar> Module<T> for Conv3x3Norm<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(p, "weight"), &self.weight);
        self.norm.visit(&join(p, "norm"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(p, "weight"), &mut self.weight);
        self.norm.visit_mut(&join(p, "norm"), f);
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(p, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(p, &i.to_string()), f);
        }
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Some(m) = self {
            m.visit(p, f);
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Some(m) = self {
            m.visit_mut(p, f);
        }
    }
}
