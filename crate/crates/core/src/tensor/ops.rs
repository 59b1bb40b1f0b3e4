//! Elementwise maps, broadcasts, reductions and softmax.

use rand::Rng;

use super::{same_shape, GradArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Tensor<T> {
        // df(x, y) is dy/dx given input x and output y.
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let x = a.inputs[0].data();
                let g = a
                    .grad
                    .iter()
                    .zip(x.iter().zip(a.output))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        self.unary(move |x| x + s, |_, _| T::one())
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
        df: impl Fn(T, T) -> (T, T) + 'static,
    ) -> Result<Tensor<T>> {
        same_shape(op, self.shape(), other.shape())?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let (x, y) = (a.inputs[0].data(), a.inputs[1].data());
                let mut ga = Vec::with_capacity(x.len());
                let mut gb = Vec::with_capacity(x.len());
                for ((&g, &xa), &xb) in a.grad.iter().zip(x).zip(y) {
                    let (da, db) = df(xa, xb);
                    ga.push(g * da);
                    gb.push(g * db);
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |a, b| a + b, |_, _| (T::one(), T::one()))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    /// Adds `b` broadcast over `self`: element `i` uses `b[(i / inner) % b.len()]`.
    ///
    /// `inner = 1` tiles `b` along the trailing axis (row bias); `inner = H*W`
    /// with `b.len() = C` is a per-channel bias on a C×H×W tensor.
    pub fn add_broadcast(&self, b: &Tensor<T>, inner: usize) -> Result<Tensor<T>> {
        self.broadcast(b, inner, false)
    }

    /// Multiplies by `b` broadcast as in [`Tensor::add_broadcast`].
    pub fn mul_broadcast(&self, b: &Tensor<T>, inner: usize) -> Result<Tensor<T>> {
        self.broadcast(b, inner, true)
    }

    fn broadcast(&self, b: &Tensor<T>, inner: usize, multiply: bool) -> Result<Tensor<T>> {
        let n = self.numel();
        let m = b.numel();
        if inner == 0 || !n.is_multiple_of(m * inner) {
            return Err(Error::dim(
                "broadcast",
                format!(
                    "cannot broadcast {:?} over {:?} with inner {inner}",
                    b.shape(),
                    self.shape()
                ),
            ));
        }
        let bd = b.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let v = bd[(i / inner) % m];
                if multiply {
                    x * v
                } else {
                    x + v
                }
            })
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), b.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let bd = a.inputs[1].data();
                let xd = a.inputs[0].data();
                let ga = if a.needs(0) {
                    Some(if multiply {
                        a.grad
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| g * bd[(i / inner) % m])
                            .collect()
                    } else {
                        a.grad.to_vec()
                    })
                } else {
                    None
                };
                let gb = if a.needs(1) {
                    let mut gb = vec![T::zero(); m];
                    for (i, &g) in a.grad.iter().enumerate() {
                        let j = (i / inner) % m;
                        gb[j] += if multiply { g * xd[i] } else { g };
                    }
                    Some(gb)
                } else {
                    None
                };
                vec![ga, gb]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(
            vec![s],
            vec![1],
            vec![self.clone()],
            Box::new(|a: &GradArgs<'_, T>| vec![Some(vec![a.grad[0]; a.inputs[0].numel()])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::of_usize(self.numel());
        self.sum().scale(T::one() / n)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for k in 0..len {
                    mx = mx.max(x[base + k * inner]);
                }
                let mut z = T::zero();
                for k in 0..len {
                    let e = (x[base + k * inner] - mx).exp();
                    y[base + k * inner] = e;
                    z += e;
                }
                for k in 0..len {
                    y[base + k * inner] /= z;
                }
            }
        }
        Ok(Tensor::from_op(
            y,
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let y = a.output;
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for k in 0..len {
                            dot += a.grad[base + k * inner] * y[base + k * inner];
                        }
                        for k in 0..len {
                            let idx = base + k * inner;
                            gx[idx] = y[idx] * (a.grad[idx] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout rate {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = Tensor::constant(mask, self.shape().to_vec());
        self.mul(&mask)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
