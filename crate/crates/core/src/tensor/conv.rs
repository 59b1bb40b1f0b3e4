//! Spatial operators on C×H×W tensors: convolutions, normalization,
//! bilinear resampling. Zero padding everywhere; bilinear sampling is
//! corner-aligned.

use super::linalg::{batched, Layout};
use super::{GradArgs, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn chw<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::dim(op, format!("expected C×H×W, got {s:?}"))),
    }
}

/// Output extent of a strided, padded window sweep.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad).saturating_sub(kernel) / stride + 1
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// For every (c, ky, kx) row and output position: flat source index or None.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let cols = self.ho * self.wo;
        for c in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src = (c * self.h + iy as usize) * self.w + ix as usize;
                            f(row * cols + oy * self.wo + ox, src, row);
                        }
                    }
                }
            }
        }
    }
}

/// Bilinear source coordinates for one axis: (lower index, upper index, weight).
pub(crate) fn resize_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            let src = if n_in == 1 {
                0.0
            } else if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    /// Dense 2-D convolution, `weight` O×C×k×k, optional bias of length O.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let (c, h, w) = chw("conv2d", self)?;
        let (o, k) = match weight.shape() {
            [o, ci, k, k2] if *ci == c && k == k2 => (*o, *k),
            s => {
                return Err(Error::dim(
                    "conv2d",
                    format!("kernel {s:?} incompatible with input {:?}", self.shape()),
                ))
            }
        };
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {k} larger than padded input {:?}", self.shape()),
            ));
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: conv_out_extent(h, k, stride, pad),
            wo: conv_out_extent(w, k, stride, pad),
        };
        let cols_n = geom.ho * geom.wo;
        let rows = c * k * k;
        let x = self.data();
        let mut cols = vec![T::zero(); rows * cols_n];
        geom.for_each(|dst, src, _| cols[dst] = x[src]);
        let mut out = batched(Layout::Nn, 1, o, rows, cols_n, weight.data(), &cols);
        if let Some(b) = bias {
            if b.numel() != o {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {:?} for {o} output channels", b.shape()),
                ));
            }
            for (oc, &bv) in b.data().iter().enumerate() {
                out[oc * cols_n..(oc + 1) * cols_n]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let (ho, wo) = (geom.ho, geom.wo);
        Ok(Tensor::from_op(
            out,
            vec![o, ho, wo],
            inputs,
            Box::new(move |a: &GradArgs<'_, T>| {
                let g = a.grad;
                let gx = a.needs(0).then(|| {
                    let dcols = batched(Layout::Tn, 1, rows, o, cols_n, a.inputs[1].data(), g);
                    let mut gx = vec![T::zero(); c * h * w];
                    geom.for_each(|dst, src, _| gx[src] += dcols[dst]);
                    gx
                });
                let gw = a
                    .needs(1)
                    .then(|| batched(Layout::Nt, 1, o, cols_n, rows, g, &cols));
                let mut res = vec![gx, gw];
                if a.inputs.len() == 3 {
                    res.push(a.needs(2).then(|| {
                        (0..o)
                            .map(|oc| g[oc * cols_n..(oc + 1) * cols_n].iter().copied().sum())
                            .collect()
                    }));
                }
                res
            }),
        ))
    }

    /// Pointwise (1×1) convolution: `weight` O×C, optional bias of length O.
    pub fn conv1x1(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (c, h, w) = chw("conv1x1", self)?;
        let o = match weight.shape() {
            [o, ci] if *ci == c => *o,
            s => {
                return Err(Error::dim(
                    "conv1x1",
                    format!("weight {s:?} incompatible with input {:?}", self.shape()),
                ))
            }
        };
        let y = weight.matmul(&self.reshape(&[c, h * w])?)?;
        let y = match bias {
            Some(b) => y.add_broadcast(b, h * w)?,
            None => y,
        };
        y.reshape(&[o, h, w])
    }

    /// 3×3 depthwise convolution with unit stride and zero padding 1.
    pub fn depthwise_conv3x3(&self, kernels: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = chw("depthwise_conv3x3", self)?;
        if kernels.shape() != [c, 3, 3] {
            return Err(Error::dim(
                "depthwise_conv3x3",
                format!("kernels {:?} for input {:?}", kernels.shape(), self.shape()),
            ));
        }
        let x = self.data();
        let kd = kernels.data();
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = T::zero();
                    for dy in 0..3 {
                        let iy = y as isize + dy as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let ix = xx as isize + dx as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            s += kd[ch * 9 + dy * 3 + dx]
                                * x[(ch * h + iy as usize) * w + ix as usize];
                        }
                    }
                    out[(ch * h + y) * w + xx] = s;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![c, h, w],
            vec![self.clone(), kernels.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let x = a.inputs[0].data();
                let kd = a.inputs[1].data();
                let mut gx = vec![T::zero(); c * h * w];
                let mut gk = vec![T::zero(); c * 9];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            let g = a.grad[(ch * h + y) * w + xx];
                            if g == T::zero() {
                                continue;
                            }
                            for dy in 0..3 {
                                let iy = y as isize + dy as isize - 1;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for dx in 0..3 {
                                    let ix = xx as isize + dx as isize - 1;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let src = (ch * h + iy as usize) * w + ix as usize;
                                    gx[src] += kd[ch * 9 + dy * 3 + dx] * g;
                                    gk[ch * 9 + dy * 3 + dx] += x[src] * g;
                                }
                            }
                        }
                    }
                }
                vec![a.needs(0).then_some(gx), a.needs(1).then_some(gk)]
            }),
        ))
    }

    /// Per-channel normalization over all non-channel positions followed by
    /// the learned affine map `gamma * x̂ + beta`.
    pub fn batch_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let c = self.shape()[0];
        if gamma.numel() != c || beta.numel() != c {
            return Err(Error::dim(
                "batch_norm",
                format!(
                    "affine {:?}/{:?} for {c} channels",
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let n = self.numel() / c;
        let nt = T::of_usize(n);
        let eps = T::of(eps);
        let x = self.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let xs = &x[ch * n..(ch + 1) * n];
            let mean = xs.iter().copied().sum::<T>() / nt;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for (dst, &v) in xhat[ch * n..(ch + 1) * n].iter_mut().zip(xs) {
                *dst = (v - mean) * is;
            }
        }
        let (gd, bd) = (gamma.data(), beta.data());
        let out = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| gd[i / n] * v + bd[i / n])
            .collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let gd = a.inputs[1].data();
                let mut gx = vec![T::zero(); c * n];
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for ch in 0..c {
                    let g = &a.grad[ch * n..(ch + 1) * n];
                    let xh = &xhat[ch * n..(ch + 1) * n];
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for (&gv, &xv) in g.iter().zip(xh) {
                        sum_g += gv;
                        sum_gx += gv * xv;
                    }
                    gg[ch] = sum_gx;
                    gb[ch] = sum_g;
                    let scale = gd[ch] * inv_std[ch] / nt;
                    for ((dst, &gv), &xv) in gx[ch * n..(ch + 1) * n].iter_mut().zip(g).zip(xh) {
                        *dst = scale * (nt * gv - sum_g - xv * sum_gx);
                    }
                }
                vec![
                    a.needs(0).then_some(gx),
                    a.needs(1).then_some(gg),
                    a.needs(2).then_some(gb),
                ]
            }),
        ))
    }

    /// Pointwise projection, batch normalization (eps 1e-5), then ReLU.
    pub fn conv1x1_bn_relu(
        &self,
        weight: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        Ok(self
            .conv1x1(weight, None)?
            .batch_norm(gamma, beta, 1e-5)?
            .relu())
    }

    /// Corner-aligned bilinear resampling of a C×H×W tensor to C×H'×W'.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        let (c, h, w) = chw("bilinear_resize", self)?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::Parameter(format!(
                "resize target {out_h}×{out_w} is empty"
            )));
        }
        if out_h == h && out_w == w {
            return Ok(self.clone());
        }
        let ry = resize_axis(h, out_h);
        let rx = resize_axis(w, out_w);
        let x = self.data();
        let mut out = vec![T::zero(); c * out_h * out_w];
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, wy)) in ry.iter().enumerate() {
                let wy = T::of(wy);
                for (ox, &(x0, x1, wx)) in rx.iter().enumerate() {
                    let wx = T::of(wx);
                    let top = plane[y0 * w + x0] * (T::one() - wx) + plane[y0 * w + x1] * wx;
                    let bot = plane[y1 * w + x0] * (T::one() - wx) + plane[y1 * w + x1] * wx;
                    out[(ch * out_h + oy) * out_w + ox] = top * (T::one() - wy) + bot * wy;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![c, out_h, out_w],
            vec![self.clone()],
            Box::new(move |a: &GradArgs<'_, T>| {
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                    for (oy, &(y0, y1, wy)) in ry.iter().enumerate() {
                        let wy = T::of(wy);
                        for (ox, &(x0, x1, wx)) in rx.iter().enumerate() {
                            let wx = T::of(wx);
                            let g = a.grad[(ch * out_h + oy) * out_w + ox];
                            plane[y0 * w + x0] += g * (T::one() - wy) * (T::one() - wx);
                            plane[y0 * w + x1] += g * (T::one() - wy) * wx;
                            plane[y1 * w + x0] += g * wy * (T::one() - wx);
                            plane[y1 * w + x1] += g * wy * wx;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
