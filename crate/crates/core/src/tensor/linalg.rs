//! Matrix products (plain and batched) with transposed-operand variants.

use super::{GradArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Layout {
    /// A·B, A m×k, B k×n.
    Nn,
    /// A·Bᵀ, A m×k, B n×k.
    Nt,
    /// Aᵀ·B, A k×m, B k×n.
    Tn,
}

/// c += op(a)·op(b) for a single m×n output block.
fn gemm<T: Scalar>(layout: Layout, m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    match layout {
        Layout::Nn => {
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == T::zero() {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += aip * bv;
                    }
                }
            }
        }
        Layout::Nt => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut s = T::zero();
                    for (&x, &y) in arow.iter().zip(brow) {
                        s += x * y;
                    }
                    c[i * n + j] += s;
                }
            }
        }
        Layout::Tn => {
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = a[p * m + i];
                    if api == T::zero() {
                        continue;
                    }
                    let crow = &mut c[i * n..(i + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += api * bv;
                    }
                }
            }
        }
    }
}

pub(super) fn batched<T: Scalar>(
    layout: Layout,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        gemm(
            layout,
            m,
            k,
            n,
            &a[bi * m * k..(bi + 1) * m * k],
            &b[bi * k * n..(bi + 1) * k * n],
            &mut c[bi * m * n..(bi + 1) * m * n],
        );
    }
    c
}

fn product<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    layout: Layout,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
) -> Tensor<T> {
    let data = batched(layout, batch, m, k, n, a.data(), b.data());
    Tensor::from_op(
        data,
        out_shape,
        vec![a.clone(), b.clone()],
        Box::new(move |args: &GradArgs<'_, T>| {
            let (ad, bd, g) = (args.inputs[0].data(), args.inputs[1].data(), args.grad);
            let (ga, gb) = match layout {
                Layout::Nn => (
                    args.needs(0)
                        .then(|| batched(Layout::Nt, batch, m, n, k, g, bd)),
                    args.needs(1)
                        .then(|| batched(Layout::Tn, batch, k, m, n, ad, g)),
                ),
                Layout::Nt => (
                    args.needs(0)
                        .then(|| batched(Layout::Nn, batch, m, n, k, g, bd)),
                    args.needs(1)
                        .then(|| batched(Layout::Tn, batch, n, m, k, g, ad)),
                ),
                Layout::Tn => (
                    args.needs(0)
                        .then(|| batched(Layout::Nt, batch, k, n, m, bd, g)),
                    args.needs(1)
                        .then(|| batched(Layout::Nn, batch, k, m, n, ad, g)),
                ),
            };
            vec![ga, gb]
        }),
    )
}

fn dims2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(
            op,
            format!("expected a matrix, got shape {s:?}"),
        )),
    }
}

fn dims3<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [b, r, c] => Ok((*b, *r, *c)),
        s => Err(Error::dim(
            op,
            format!("expected a batch of matrices, got shape {s:?}"),
        )),
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(op, format!("inner extents disagree: {a:?} vs {b:?}"))
}

impl<T: Scalar> Tensor<T> {
    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = dims2("matmul", self)?;
        let (k2, n) = dims2("matmul", other)?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(), other.shape()));
        }
        Ok(product(self, other, Layout::Nn, 1, m, k, n, vec![m, n]))
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_nt(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = dims2("matmul_nt", self)?;
        let (n, k2) = dims2("matmul_nt", other)?;
        if k != k2 {
            return Err(mismatch("matmul_nt", self.shape(), other.shape()));
        }
        Ok(product(self, other, Layout::Nt, 1, m, k, n, vec![m, n]))
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_tn(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (k, m) = dims2("matmul_tn", self)?;
        let (k2, n) = dims2("matmul_tn", other)?;
        if k != k2 {
            return Err(mismatch("matmul_tn", self.shape(), other.shape()));
        }
        Ok(product(self, other, Layout::Tn, 1, m, k, n, vec![m, n]))
    }

    /// Batched product over the leading axis: B×m×k · B×k×n.
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, m, k) = dims3("bmm", self)?;
        let (b2, k2, n) = dims3("bmm", other)?;
        if b != b2 || k != k2 {
            return Err(mismatch("bmm", self.shape(), other.shape()));
        }
        Ok(product(self, other, Layout::Nn, b, m, k, n, vec![b, m, n]))
    }

    /// Batched `A·Bᵀ`: B×m×k · (B×n×k)ᵀ.
    pub fn bmm_nt(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, m, k) = dims3("bmm_nt", self)?;
        let (b2, n, k2) = dims3("bmm_nt", other)?;
        if b != b2 || k != k2 {
            return Err(mismatch("bmm_nt", self.shape(), other.shape()));
        }
        Ok(product(self, other, Layout::Nt, b, m, k, n, vec![b, m, n]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_product_returns_operand() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let eye = Tensor::<f64>::new(eye, &[3, 3]).unwrap();
        let b = Tensor::new((0..6).map(|v| v as f64 - 2.5).collect(), &[3, 2]).unwrap();
        assert_eq!(eye.matmul(&b).unwrap().data(), b.data());
    }

    #[test]
    fn small_hand_product() {
        let a = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![0.0, 1.0], &[2, 1]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_variants_agree_with_plain_product() {
        let a = Tensor::<f64>::new((0..6).map(|v| v as f64 * 0.5).collect(), &[2, 3]).unwrap();
        let b = Tensor::new((0..12).map(|v| (v as f64).cos()).collect(), &[3, 4]).unwrap();
        let plain = a.matmul(&b).unwrap();
        let bt = b.transpose2d().unwrap();
        let nt = a.matmul_nt(&bt).unwrap();
        let at = a.transpose2d().unwrap();
        let tn = at.matmul_tn(&b).unwrap();
        for ((x, y), z) in plain.data().iter().zip(nt.data()).zip(tn.data()) {
            assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
        }
    }

    #[test]
    fn matmul_gradient_is_ones_times_b_transpose() {
        let a = Tensor::<f64>::param(vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4], &[2, 3]).unwrap();
        let b = Tensor::new(vec![1.0, 2.0, -1.0, 0.5, 0.25, 3.0], &[3, 2]).unwrap();
        a.matmul(&b).unwrap().sum().backward().unwrap();
        let g = a.grad().unwrap();
        for i in 0..2 {
            for p in 0..3 {
                let expect = b.data()[p * 2] + b.data()[p * 2 + 1];
                assert!((g[i * 3 + p] - expect).abs() < 1e-14);
            }
        }
    }
}
