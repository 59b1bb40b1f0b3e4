//! Resolution transformer block: non-overlapping window partition, per-window
//! multi-head self-attention with a learned relative position bias, window
//! merge, and a feed-forward network with a depthwise 3×3 convolution
//! between its two pointwise layers.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::{init_const, init_uniform, join, ModelRng, Module, Pointwise, RELU_GAIN};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, GATHER_ZERO};

/// Additive logit applied to padded keys.
const MASKED_LOGIT: f64 = -1e9;

/// Windows cut from a C×H×W map. `windows` is nW×K²×C; window `n` is
/// `(n / cols, n % cols)` on the window grid and its rows are the K² pixels
/// in row-major order.
#[derive(Clone, Debug)]
pub struct WindowGrid<T: Scalar> {
    pub window: usize,
    pub windows: Tensor<T>,
    /// (C, H, W) of the source map.
    pub origin: (usize, usize, usize),
    pub pad_bottom: usize,
    pub pad_right: usize,
}

impl<T: Scalar> WindowGrid<T> {
    pub fn rows(&self) -> usize {
        (self.origin.1 + self.pad_bottom) / self.window
    }

    pub fn cols(&self) -> usize {
        (self.origin.2 + self.pad_right) / self.window
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Window `n` as a K²×C tensor.
    pub fn window_tensor(&self, n: usize) -> Result<Tensor<T>> {
        let k2 = self.window * self.window;
        self.windows.slice0(n, n + 1)?.reshape(&[k2, self.origin.0])
    }

    /// Per-window flags: true where the key position is padding.
    pub fn padding_mask(&self) -> Vec<bool> {
        let (_, h, w) = self.origin;
        let k = self.window;
        let mut mask = Vec::with_capacity(self.len() * k * k);
        for wy in 0..self.rows() {
            for wx in 0..self.cols() {
                for ly in 0..k {
                    for lx in 0..k {
                        mask.push(wy * k + ly >= h || wx * k + lx >= w);
                    }
                }
            }
        }
        mask
    }

    fn index_map(&self) -> Vec<usize> {
        // For each window element, the flat source index in C×H×W (or pad).
        let (c, h, w) = self.origin;
        let k = self.window;
        let mut idx = Vec::with_capacity(self.len() * k * k * c);
        for wy in 0..self.rows() {
            for wx in 0..self.cols() {
                for ly in 0..k {
                    for lx in 0..k {
                        let (y, x) = (wy * k + ly, wx * k + lx);
                        for ch in 0..c {
                            idx.push(if y < h && x < w {
                                (ch * h + y) * w + x
                            } else {
                                GATHER_ZERO
                            });
                        }
                    }
                }
            }
        }
        idx
    }
}

/// Splits a C×H×W map into ⌈H/K⌉·⌈W/K⌉ windows, zero padding bottom/right.
pub fn window_partition<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<WindowGrid<T>> {
    if window == 0 {
        return Err(Error::Parameter("window size must be positive".into()));
    }
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::dim(
                "window_partition",
                format!("expected C×H×W, got {s:?}"),
            ))
        }
    };
    let pad_bottom = (window - h % window) % window;
    let pad_right = (window - w % window) % window;
    let mut grid = WindowGrid {
        window,
        windows: Tensor::zeros(&[1]),
        origin: (c, h, w),
        pad_bottom,
        pad_right,
    };
    let n = grid.len();
    grid.windows = x.gather(Rc::new(grid.index_map()), &[n, window * window, c])?;
    Ok(grid)
}

/// Exact inverse of [`window_partition`]; padding is dropped.
pub fn window_merge<T: Scalar>(grid: &WindowGrid<T>) -> Result<Tensor<T>> {
    let (c, h, w) = grid.origin;
    let k = grid.window;
    if k == 0
        || !(h + grid.pad_bottom).is_multiple_of(k)
        || !(w + grid.pad_right).is_multiple_of(k)
        || grid.pad_bottom >= k
        || grid.pad_right >= k
        || grid.windows.shape() != [grid.len(), k * k, c]
    {
        return Err(Error::Contract(format!(
            "inconsistent window grid: windows {:?}, origin {:?}, K={k}",
            grid.windows.shape(),
            grid.origin
        )));
    }
    let forward = grid.index_map();
    let mut inverse = vec![GATHER_ZERO; c * h * w];
    for (pos, &src) in forward.iter().enumerate() {
        if src != GATHER_ZERO {
            inverse[src] = pos;
        }
    }
    grid.windows.gather(Rc::new(inverse), &[c, h, w])
}

/// Projection weights of one attention layer. Head `h` owns columns
/// `h·C/H .. (h+1)·C/H` of the query, key and value matrices.
#[derive(Clone, Debug)]
pub struct AttentionWeights<T: Scalar> {
    pub heads: usize,
    pub window: usize,
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub value: Tensor<T>,
    pub output: Tensor<T>,
    /// heads × (2K−1)² additive bias indexed by the 2-D query–key offset.
    pub rel_bias: Tensor<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn new(rng: &mut ModelRng, channels: usize, heads: usize, window: usize) -> Result<Self> {
        validate_heads(channels, heads)?;
        let span = (2 * window - 1) * (2 * window - 1);
        Ok(Self {
            heads,
            window,
            query: init_uniform(rng, &[channels, channels], channels, 1.0),
            key: init_uniform(rng, &[channels, channels], channels, 1.0),
            value: init_uniform(rng, &[channels, channels], channels, 1.0),
            output: init_uniform(rng, &[channels, channels], channels, 0.5),
            rel_bias: init_const(&[heads, span], 0.0),
        })
    }

    pub fn channels(&self) -> usize {
        self.query.shape()[0]
    }

    fn check(&self) -> Result<()> {
        let c = self.channels();
        validate_heads(c, self.heads)?;
        let span = (2 * self.window - 1) * (2 * self.window - 1);
        if self.rel_bias.shape() != [self.heads, span] {
            return Err(Error::Config(format!(
                "relative bias {:?} does not match {} heads and window {}",
                self.rel_bias.shape(),
                self.heads,
                self.window
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Module<T> for AttentionWeights<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(p, "query"), &self.query);
        f(&join(p, "key"), &self.key);
        f(&join(p, "value"), &self.value);
        f(&join(p, "output"), &self.output);
        f(&join(p, "rel_bias"), &self.rel_bias);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(p, "query"), &mut self.query);
        f(&join(p, "key"), &mut self.key);
        f(&join(p, "value"), &mut self.value);
        f(&join(p, "output"), &mut self.output);
        f(&join(p, "rel_bias"), &mut self.rel_bias);
    }
}

fn validate_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        Err(Error::Config(format!(
            "{channels} channels not divisible into {heads} heads"
        )))
    } else {
        Ok(())
    }
}

/// Flat index into the bias table for every (head, query, key) triple.
fn rel_bias_index(heads: usize, window: usize) -> Vec<usize> {
    let k = window as isize;
    let span = (2 * k - 1) as usize;
    let k2 = window * window;
    let mut idx = Vec::with_capacity(heads * k2 * k2);
    for h in 0..heads {
        for i in 0..k2 {
            let (yi, xi) = ((i / window) as isize, (i % window) as isize);
            for j in 0..k2 {
                let (yj, xj) = ((j / window) as isize, (j % window) as isize);
                let off = (yi - yj + k - 1) as usize * span + (xi - xj + k - 1) as usize;
                idx.push(h * span * span + off);
            }
        }
    }
    idx
}

/// Output of batched window attention.
pub struct AttentionOutput<T: Scalar> {
    /// nW×K²×C, residual included.
    pub output: Tensor<T>,
    /// (nW·H)×K²×K² attention probabilities.
    pub attention: Tensor<T>,
}

/// Multi-head self-attention applied independently to each window.
///
/// `windows` is nW×K²×C. `key_padding`, when given, has nW·K² entries and
/// excludes padded keys from the softmax.
pub fn window_mhsa_batched<T: Scalar>(
    windows: &Tensor<T>,
    weights: &AttentionWeights<T>,
    key_padding: Option<&[bool]>,
) -> Result<AttentionOutput<T>> {
    weights.check()?;
    let (nw, k2, c) = match windows.shape() {
        [n, t, c] => (*n, *t, *c),
        s => {
            return Err(Error::dim(
                "window_mhsa",
                format!("expected nW×K²×C, got {s:?}"),
            ))
        }
    };
    if c != weights.channels() {
        return Err(Error::dim(
            "window_mhsa",
            format!("{c} channels vs projection {:?}", weights.query.shape()),
        ));
    }
    if k2 != weights.window * weights.window {
        return Err(Error::dim(
            "window_mhsa",
            format!("{k2} tokens per window but window size {}", weights.window),
        ));
    }
    let heads = weights.heads;
    let d = c / heads;
    let tokens = windows.reshape(&[nw * k2, c])?;

    // (n, i, h·d + e) -> (n·H + h, i, e)
    let split: Vec<usize> = (0..nw)
        .flat_map(|n| {
            (0..heads).flat_map(move |h| {
                (0..k2).flat_map(move |i| (0..d).map(move |e| (n * k2 + i) * c + h * d + e))
            })
        })
        .collect();
    let split = Rc::new(split);
    let per_head = |w: &Tensor<T>| -> Result<Tensor<T>> {
        tokens
            .matmul(w)?
            .gather(Rc::clone(&split), &[nw * heads, k2, d])
    };
    let q = per_head(&weights.query)?;
    let kk = per_head(&weights.key)?;
    let v = per_head(&weights.value)?;

    let scale = T::one() / T::of_usize(d).sqrt();
    let bias = weights.rel_bias.gather(
        Rc::new(rel_bias_index(heads, weights.window)),
        &[heads, k2, k2],
    )?;
    let mut scores = q.bmm_nt(&kk)?.scale(scale).add_broadcast(&bias, 1)?;
    if let Some(pad) = key_padding {
        if pad.len() != nw * k2 {
            return Err(Error::dim(
                "window_mhsa",
                format!("{} padding flags for {nw}×{k2}", pad.len()),
            ));
        }
        if pad.iter().any(|&p| p) {
            let mut m = vec![T::zero(); nw * heads * k2 * k2];
            for n in 0..nw {
                for j in 0..k2 {
                    if pad[n * k2 + j] {
                        for h in 0..heads {
                            for i in 0..k2 {
                                m[((n * heads + h) * k2 + i) * k2 + j] = T::of(MASKED_LOGIT);
                            }
                        }
                    }
                }
            }
            scores = scores.add(&Tensor::new(m, &[nw * heads, k2, k2])?)?;
        }
    }
    let attention = scores.softmax(2)?;
    let heads_out = attention.bmm(&v)?;
    // Inverse of `split`: concatenate heads back along channels.
    let mut merge = vec![0usize; nw * k2 * c];
    for (pos, &src) in split.iter().enumerate() {
        merge[src] = pos;
    }
    let concat = heads_out.gather(Rc::new(merge), &[nw * k2, c])?;
    let output = tokens
        .add(&concat.matmul(&weights.output)?)?
        .reshape(&[nw, k2, c])?;
    Ok(AttentionOutput { output, attention })
}

/// Self-attention on a single K²×C window.
pub fn window_mhsa<T: Scalar>(
    window: &Tensor<T>,
    weights: &AttentionWeights<T>,
) -> Result<Tensor<T>> {
    let (k2, c) = match window.shape() {
        [t, c] => (*t, *c),
        s => {
            return Err(Error::dim(
                "window_mhsa",
                format!("expected K²×C, got {s:?}"),
            ))
        }
    };
    window_mhsa_batched(&window.reshape(&[1, k2, c])?, weights, None)?
        .output
        .reshape(&[k2, c])
}

/// Pointwise expand, ReLU, depthwise 3×3, ReLU, pointwise contract, residual.
#[derive(Clone, Debug)]
pub struct ConvFfn<T: Scalar> {
    pub expand: Pointwise<T>,
    pub depthwise: Tensor<T>,
    pub contract: Pointwise<T>,
}

impl<T: Scalar> ConvFfn<T> {
    pub fn new(rng: &mut ModelRng, channels: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::Parameter(
                "expansion ratio must be at least 1".into(),
            ));
        }
        let hidden = channels * ratio;
        Ok(Self {
            expand: Pointwise::new(rng, channels, hidden, RELU_GAIN),
            depthwise: init_uniform(rng, &[hidden, 3, 3], 9, RELU_GAIN),
            contract: Pointwise::new(rng, hidden, channels, 0.5),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.expand.forward(x)?.relu();
        let h = h.depthwise_conv3x3(&self.depthwise)?.relu();
        x.add(&self.contract.forward(&h)?)
    }
}

impl<T: Scalar> Module<T> for ConvFfn<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.expand.visit(&join(p, "expand"), f);
        f(&join(p, "depthwise"), &self.depthwise);
        self.contract.visit(&join(p, "contract"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.expand.visit_mut(&join(p, "expand"), f);
        f(&join(p, "depthwise"), &mut self.depthwise);
        self.contract.visit_mut(&join(p, "contract"), f);
    }
}

/// One resolution transformer block.
#[derive(Clone, Debug)]
pub struct RtBlock<T: Scalar> {
    pub attention: AttentionWeights<T>,
    pub ffn: ConvFfn<T>,
}

impl<T: Scalar> RtBlock<T> {
    pub fn new(
        rng: &mut ModelRng,
        channels: usize,
        heads: usize,
        window: usize,
        ratio: usize,
    ) -> Result<Self> {
        Ok(Self {
            attention: AttentionWeights::new(rng, channels, heads, window)?,
            ffn: ConvFfn::new(rng, channels, ratio)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grid = window_partition(x, self.attention.window)?;
        let pad = grid.padding_mask();
        let masked = grid.pad_bottom > 0 || grid.pad_right > 0;
        grid.windows =
            window_mhsa_batched(&grid.windows, &self.attention, masked.then_some(&pad[..]))?.output;
        self.ffn.forward(&window_merge(&grid)?)
    }
}

impl<T: Scalar> Module<T> for RtBlock<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.attention.visit(&join(p, "attn"), f);
        self.ffn.visit(&join(p, "ffn"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.attention.visit_mut(&join(p, "attn"), f);
        self.ffn.visit_mut(&join(p, "ffn"), f);
    }
}

/// `rt_block(x, K, weights)`: partition, attend, merge, feed-forward.
pub fn rt_block<T: Scalar>(x: &Tensor<T>, block: &RtBlock<T>) -> Result<Tensor<T>> {
    block.forward(x)
}
