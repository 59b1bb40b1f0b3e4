//! Seeded finite-difference cases for every differentiable operation.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check, check_with_step, run_cases, OpReport, FD_STEP};
use crate::error::Result;
use crate::losses::{self, ContourPair, LossWeights};
use crate::nn::{Conv3x3Norm, ModelRng, Module};
use crate::omega::{
    add_branch, cross_modal_fuse, fuse_streams, segmentation_head, stem, CrossFuse, InputMode,
    NetInput, NetworkConfig, OmegaNet, SegHead, Stem, StreamFusion,
};
use crate::srtcm::{
    window_merge, window_mhsa, window_mhsa_batched, window_partition, AttentionWeights, ConvFfn,
    RtBlock,
};
use crate::stsro::{
    augment_and_classify, pixel_region_relation, region_representation, stsro_forward, RegionBank,
    SoftObjectRegions, Stsro,
};
use crate::tensor::{Tensor, GATHER_ZERO};
use crate::vem::{
    bilinear_sample, evolve, evolve_step, sample_field, Contour, FieldHead, VibrationField,
};

/// Seeded cases per operation in the default suite.
pub const DEFAULT_CASES: usize = 20;

/// One checked operation: `case(seed)` returns the worst relative error.
pub struct GradCase {
    pub group: &'static str,
    pub op: &'static str,
    pub case: fn(u64) -> Result<f64>,
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ salt)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| r.gen_range(lo..hi)).collect(), shape).expect("shape matches data")
}

/// Values bounded away from zero, for kinked functions.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.1..2.0);
            if r.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(data, shape).expect("shape matches data")
}

fn labels(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut y: Vec<f64> = (0..n)
        .map(|_| if r.gen::<bool>() { 1.0 } else { 0.0 })
        .collect();
    y[0] = 1.0;
    y[n - 1] = 0.0;
    y
}

/// Difference step for whole modules. Their many ReLU inputs are normalized
/// to unit scale, so a smaller step keeps kinks out of the interval.
const MODULE_STEP: f64 = 1e-7;

/// Checks `f` jointly in its data inputs and every parameter of `module`.
fn with_module<M, F>(module: &M, inputs: Vec<Tensor<f64>>, seed: u64, f: F) -> Result<f64>
where
    M: Module<f64> + Clone,
    F: Fn(&M, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    with_module_at(MODULE_STEP, module, inputs, seed, f)
}

fn with_module_at<M, F>(
    step: f64,
    module: &M,
    inputs: Vec<Tensor<f64>>,
    seed: u64,
    f: F,
) -> Result<f64>
where
    M: Module<f64> + Clone,
    F: Fn(&M, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let n = inputs.len();
    let mut all = inputs;
    all.extend(module.parameters().into_iter().map(|(_, t)| t));
    check_with_step(
        |ts| {
            let mut m = module.clone();
            m.set_parameters(&ts[n..])?;
            f(&m, &ts[..n])
        },
        &all,
        seed,
        step,
    )
}

fn model_rng(seed: u64) -> ModelRng {
    ModelRng::seed_from_u64(seed ^ 0x6d6f_6465_6c)
}

fn net_cfg(seed: u64) -> NetworkConfig {
    NetworkConfig {
        input_size: 16,
        base_channels: 4,
        stages: 2,
        heads: vec![1, 2],
        windows: vec![2, 2],
        head_width: 6,
        key_width: 3,
        input_mode: if seed.is_multiple_of(2) {
            InputMode::DualBranch
        } else {
            InputMode::SingleBranch4ch
        },
        dropout: 0.0,
        ..NetworkConfig::default()
    }
}

fn pyramid(r: &mut ChaCha8Rng, cfg: &NetworkConfig, streams: usize) -> Vec<Tensor<f64>> {
    (0..streams)
        .map(|s| {
            let n = cfg.stream_size(s);
            uniform(r, &[cfg.stream_channels(s), n, n], -1.0, 1.0)
        })
        .collect()
}

fn sum_all(parts: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let flat = parts
        .iter()
        .map(|p| p.reshape(&[p.numel()]))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&flat)
}

// Tensor operations.

fn unary(seed: u64, f: fn(&Tensor<f64>) -> Tensor<f64>, lo: f64, hi: f64) -> Result<f64> {
    let mut r = rng(seed, 1);
    let x = uniform(&mut r, &[3, 4], lo, hi);
    check(|t| Ok(f(&t[0])), &[x], seed)
}

fn case_relu(seed: u64) -> Result<f64> {
    let x = away_from_zero(&mut rng(seed, 2), &[3, 5]);
    check(|t| Ok(t[0].relu()), &[x], seed)
}

fn case_sigmoid(seed: u64) -> Result<f64> {
    unary(seed, Tensor::sigmoid, -4.0, 4.0)
}

fn case_exp(seed: u64) -> Result<f64> {
    unary(seed, Tensor::exp, -2.0, 2.0)
}

fn case_ln(seed: u64) -> Result<f64> {
    unary(seed, Tensor::ln, 0.3, 3.0)
}

fn case_square(seed: u64) -> Result<f64> {
    unary(seed, Tensor::square, -2.0, 2.0)
}

fn case_affine(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 3);
    let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
    let x = uniform(&mut r, &[7], -1.0, 1.0);
    check(|t| Ok(t[0].scale(a).add_scalar(b).neg()), &[x], seed)
}

fn binary(seed: u64, f: fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>) -> Result<f64> {
    let mut r = rng(seed, 4);
    let a = uniform(&mut r, &[2, 3, 2], -1.5, 1.5);
    let b = uniform(&mut r, &[2, 3, 2], -1.5, 1.5);
    check(|t| f(&t[0], &t[1]), &[a, b], seed)
}

fn case_add(seed: u64) -> Result<f64> {
    binary(seed, Tensor::add)
}

fn case_sub(seed: u64) -> Result<f64> {
    binary(seed, Tensor::sub)
}

fn case_mul(seed: u64) -> Result<f64> {
    binary(seed, Tensor::mul)
}

fn case_broadcast(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 5);
    let x = uniform(&mut r, &[3, 2, 4], -1.0, 1.0);
    let channel = uniform(&mut r, &[3], -1.0, 1.0);
    let row = uniform(&mut r, &[4], -1.0, 1.0);
    check(
        |t| t[0].add_broadcast(&t[1], 8)?.mul_broadcast(&t[2], 1),
        &[x, channel, row],
        seed,
    )
}

fn case_reductions(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 6);
    let x = uniform(&mut r, &[4, 3], -1.0, 1.0);
    check(
        |t| Tensor::concat(&[t[0].sum(), t[0].square().mean()]),
        &[x],
        seed,
    )
}

fn case_softmax(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 7);
    let x = uniform(&mut r, &[3, 5], -3.0, 3.0);
    let axis = (seed % 2) as usize;
    check(|t| t[0].softmax(axis), &[x], seed)
}

fn case_matmul(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 8);
    let a = uniform(&mut r, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[4, 2], -1.0, 1.0);
    let c = uniform(&mut r, &[5, 4], -1.0, 1.0);
    let d = uniform(&mut r, &[3, 5], -1.0, 1.0);
    check(
        |t| {
            let p = t[0].matmul(&t[1])?;
            let q = t[0].matmul_nt(&t[2])?;
            let s = t[3].matmul_tn(&t[0])?;
            sum_all(&[p, q, s])
        },
        &[a, b, c, d],
        seed,
    )
}

fn case_bmm(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 9);
    let a = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 4, 3], -1.0, 1.0);
    let c = uniform(&mut r, &[2, 5, 4], -1.0, 1.0);
    check(
        |t| sum_all(&[t[0].bmm(&t[1])?, t[0].bmm_nt(&t[2])?]),
        &[a, b, c],
        seed,
    )
}

fn case_reshape_transpose(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 10);
    let x = uniform(&mut r, &[2, 6], -1.0, 1.0);
    check(
        |t| Ok(t[0].reshape(&[4, 3])?.transpose2d()?.square()),
        &[x],
        seed,
    )
}

fn case_gather(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 11);
    let x = uniform(&mut r, &[6], -1.0, 1.0);
    let index: Vec<usize> = (0..10)
        .map(|_| {
            if r.gen_bool(0.2) {
                GATHER_ZERO
            } else {
                r.gen_range(0..6)
            }
        })
        .collect();
    let index = Rc::new(index);
    check(
        |t| Ok(t[0].gather(index.clone(), &[2, 5])?.square()),
        &[x],
        seed,
    )
}

fn case_concat_slice(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 12);
    let a = uniform(&mut r, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[1, 3], -1.0, 1.0);
    check(
        |t| {
            Ok(Tensor::concat(&[t[0].clone(), t[1].clone()])?
                .slice0(1, 3)?
                .square())
        },
        &[a, b],
        seed,
    )
}

fn case_conv2d(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 13);
    let stride = 1 + (seed % 2) as usize;
    let x = uniform(&mut r, &[2, 5, 5], -1.0, 1.0);
    let w = uniform(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
    let b = uniform(&mut r, &[3], -0.5, 0.5);
    check(
        |t| t[0].conv2d(&t[1], Some(&t[2]), stride, 1),
        &[x, w, b],
        seed,
    )
}

fn case_conv1x1(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 14);
    let x = uniform(&mut r, &[3, 3, 4], -1.0, 1.0);
    let w = uniform(&mut r, &[2, 3], -1.0, 1.0);
    let b = uniform(&mut r, &[2], -1.0, 1.0);
    check(|t| t[0].conv1x1(&t[1], Some(&t[2])), &[x, w, b], seed)
}

fn case_depthwise(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 15);
    let x = uniform(&mut r, &[2, 4, 5], -1.0, 1.0);
    let k = uniform(&mut r, &[2, 3, 3], -0.5, 0.5);
    check(|t| t[0].depthwise_conv3x3(&t[1]), &[x, k], seed)
}

fn case_batch_norm(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 16);
    let x = uniform(&mut r, &[3, 3, 3], -2.0, 2.0);
    let g = uniform(&mut r, &[3], 0.5, 1.5);
    let b = uniform(&mut r, &[3], -0.5, 0.5);
    check(|t| t[0].batch_norm(&t[1], &t[2], 1e-5), &[x, g, b], seed)
}

fn case_bilinear_resize(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 17);
    let n = r.gen_range(2..6);
    let m = r.gen_range(1..9);
    let x = uniform(&mut r, &[2, n, n + 1], -1.0, 1.0);
    check(|t| t[0].bilinear_resize(m, m + 2), &[x], seed)
}

fn case_dropout(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 18);
    let x = uniform(&mut r, &[4, 4], -1.0, 1.0);
    check(|t| t[0].dropout(0.6, &mut rng(seed, 19)), &[x], seed)
}

// Window attention.

fn case_window_roundtrip(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 20);
    let (h, w) = (r.gen_range(2..7), r.gen_range(2..7));
    let x = uniform(&mut r, &[2, h, w], -1.0, 1.0);
    check(
        |t| {
            let mut g = window_partition(&t[0], 3)?;
            g.windows = g.windows.square();
            window_merge(&g)
        },
        &[x],
        seed,
    )
}

fn case_window_mhsa(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 21);
    let weights = AttentionWeights::<f64>::new(&mut model_rng(seed), 4, 2, 2)?;
    let window = uniform(&mut r, &[4, 4], -1.0, 1.0);
    with_module(&weights, vec![window], seed, |w, t| window_mhsa(&t[0], w))
}

fn case_window_mhsa_padded(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 22);
    let weights = AttentionWeights::<f64>::new(&mut model_rng(seed), 4, 2, 2)?;
    let x = uniform(&mut r, &[4, 3, 3], -1.0, 1.0);
    with_module(&weights, vec![x], seed, |w, t| {
        let mut g = window_partition(&t[0], 2)?;
        let mask = g.padding_mask();
        g.windows = window_mhsa_batched(&g.windows, w, Some(&mask))?.output;
        window_merge(&g)
    })
}

fn case_conv_ffn(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 23);
    let ffn = ConvFfn::<f64>::new(&mut model_rng(seed), 3, 2)?;
    let x = uniform(&mut r, &[3, 4, 4], -1.0, 1.0);
    with_module(&ffn, vec![x], seed, |m, t| m.forward(&t[0]))
}

fn case_rt_block(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 24);
    let block = RtBlock::<f64>::new(&mut model_rng(seed), 4, 2, 2, 2)?;
    let x = uniform(&mut r, &[4, 4, 3], -1.0, 1.0);
    with_module(&block, vec![x], seed, |b, t| b.forward(&t[0]))
}

// Dual-modal encoder.

fn case_stem(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 25);
    let s = Stem::<f64>::new(&mut model_rng(seed), 3, 4);
    let x = uniform(&mut r, &[3, 8, 8], 0.0, 1.0);
    with_module(&s, vec![x], seed, |s, t| stem(&t[0], s))
}

fn case_add_branch(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 26);
    let cfg = net_cfg(seed);
    let conv = Conv3x3Norm::<f64>::new(
        &mut model_rng(seed),
        cfg.stream_channels(0),
        cfg.stream_channels(1),
        2,
        true,
    );
    let f = pyramid(&mut r, &cfg, 1);
    with_module(&conv, f, seed, |c, t| {
        sum_all(&add_branch(&t.to_vec(), c, 2)?)
    })
}

fn case_fuse_streams(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 27);
    let cfg = net_cfg(seed);
    let fusion = StreamFusion::<f64>::new(&mut model_rng(seed), &cfg, 2);
    let f = pyramid(&mut r, &cfg, 2);
    with_module(&fusion, f, seed, |m, t| {
        sum_all(&fuse_streams(&t.to_vec(), m)?)
    })
}

fn case_cross_modal_fuse(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 28);
    let cfg = net_cfg(seed);
    let mut mr = model_rng(seed);
    let fusers: Vec<CrossFuse<f64>> = (0..2)
        .map(|s| CrossFuse::new(&mut mr, cfg.stream_channels(s)))
        .collect();
    let mut inputs = pyramid(&mut r, &cfg, 2);
    inputs.extend(pyramid(&mut r, &cfg, 2));
    with_module(&fusers, inputs, seed, |m, t| {
        let (fused, img, dem) = cross_modal_fuse(&t[..2].to_vec(), &t[2..].to_vec(), m)?;
        sum_all(&[sum_all(&fused)?, sum_all(&img)?, sum_all(&dem)?])
    })
}

fn case_segmentation_head(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 29);
    let cfg = NetworkConfig {
        dropout: 0.6,
        ..net_cfg(seed)
    };
    let head = SegHead::<f64>::new(&mut model_rng(seed), &cfg);
    let f = pyramid(&mut r, &cfg, cfg.stages);
    with_module(&head, f, seed, |h, t| {
        segmentation_head(&t.to_vec(), h, Some(&mut model_rng(seed + 1)))
    })
}

fn case_omega_forward(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 30);
    let cfg = net_cfg(seed);
    let net = OmegaNet::<f64>::new(&cfg, &mut model_rng(seed))?;
    let rgb = uniform(&mut r, &[3, 16, 16], 0.0, 1.0);
    let dem = uniform(&mut r, &[1, 16, 16], -1.0, 1.0);
    with_module(&net, vec![rgb, dem], seed, |n, t| {
        let out = n.forward(
            &NetInput {
                rgb: Some(t[0].clone()),
                dem: Some(t[1].clone()),
            },
            None,
        )?;
        sum_all(&[out.pixel_features, out.soft_regions])
    })
}

// Object-region refinement.

fn case_soft_regions(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 31);
    let scores = uniform(&mut r, &[2, 3, 3], -2.0, 2.0);
    let v = uniform(&mut r, &[4, 3, 3], -1.0, 1.0);
    check(
        |t| {
            let regions = SoftObjectRegions::from_scores(&t[0])?;
            Ok(region_representation(&t[1], &regions)?.p)
        },
        &[scores, v],
        seed,
    )
}

fn case_relation(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 32);
    let transforms = Stsro::<f64>::new(&mut model_rng(seed), 4, 3).transforms;
    let scores = uniform(&mut r, &[2, 3, 3], -2.0, 2.0);
    let v = uniform(&mut r, &[4, 3, 3], -1.0, 1.0);
    with_module(&transforms, vec![scores, v], seed, |m, t| {
        let bank = region_representation(&t[1], &SoftObjectRegions::from_scores(&t[0])?)?;
        pixel_region_relation(&t[1], &bank, m)
    })
}

fn case_augment_classify(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 33);
    let classifier = Stsro::<f64>::new(&mut model_rng(seed), 4, 3).classifier;
    let v = uniform(&mut r, &[4, 3, 3], -1.0, 1.0);
    let bank = uniform(&mut r, &[2, 4], -1.0, 1.0);
    let mu = uniform(&mut r, &[2, 3, 3], 0.0, 1.0);
    with_module(&classifier, vec![v, bank, mu], seed, |c, t| {
        let bank = RegionBank { p: t[1].clone() };
        let (logits, augmented) = augment_and_classify(&t[0], &bank, &t[2], c, 5)?;
        sum_all(&[logits, augmented])
    })
}

fn case_stsro_forward(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 34);
    let params = Stsro::<f64>::new(&mut model_rng(seed), 4, 3);
    let v = uniform(&mut r, &[4, 4, 4], -1.0, 1.0);
    let scores = uniform(&mut r, &[2, 4, 4], -2.0, 2.0);
    with_module(&params, vec![v, scores], seed, |p, t| {
        let o = stsro_forward(&t[0], &t[1], p, 7)?;
        sum_all(&[o.logits, o.aux_logits])
    })
}

// Losses.

fn case_weighted_bce(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 35);
    let z = uniform(&mut r, &[12], -4.0, 4.0);
    let y = labels(&mut r, 12);
    let (wp, wn) = losses::class_weights(&y);
    check(
        |t| losses::weighted_bce_logits(&t[0], &y, wp, wn),
        &[z],
        seed,
    )
}

fn case_lovasz(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 36);
    let s = uniform(&mut r, &[3, 3], -2.0, 2.0);
    let y = labels(&mut r, 9);
    check(|t| losses::lovasz_hinge(&t[0], &y), &[s], seed)
}

fn case_chamfer(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 37);
    let (n, m) = (r.gen_range(4..9), r.gen_range(4..9));
    let a = uniform(&mut r, &[n, 2], -5.0, 5.0);
    let b = uniform(&mut r, &[m, 2], -5.0, 5.0);
    check(|t| losses::chamfer(&t[0], &t[1]), &[a, b], seed)
}

fn case_total_loss(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 38);
    let logits = uniform(&mut r, &[2, 3, 3], -2.0, 2.0);
    let aux = uniform(&mut r, &[2, 3, 3], -2.0, 2.0);
    let k = uniform(&mut r, &[6, 2], 0.0, 3.0);
    let reference = uniform(&mut r, &[6, 2], 0.0, 3.0);
    let y = labels(&mut r, 9);
    let cw = losses::class_weights(&y);
    let w = LossWeights::default();
    check(
        |t| {
            let pairs = [ContourPair {
                predicted: t[2].clone(),
                reference: reference.clone(),
            }];
            Ok(losses::total_loss(&t[0], Some(&t[1]), &pairs, &y, cw, &w)?.0)
        },
        &[logits, aux, k],
        seed,
    )
}

// Contour evolution.

fn interior_points(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor<f64> {
    let data = (0..n)
        .flat_map(|_| {
            // Keep off integer grid lines, where bilinear weights kink.
            let a = r.gen_range(0..h - 1) as f64 + r.gen_range(0.1..0.9);
            let b = r.gen_range(0..w - 1) as f64 + r.gen_range(0.1..0.9);
            [a, b]
        })
        .collect();
    Tensor::new(data, &[n, 2]).expect("n×2")
}

fn case_bilinear_sample(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 39);
    let field = uniform(&mut r, &[4, 5], 0.0, 1.0);
    let pts = interior_points(&mut r, 6, 4, 5);
    check(|t| bilinear_sample(&t[0], &t[1]), &[field, pts], seed)
}

fn case_sample_field(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 40);
    let beta = uniform(&mut r, &[5, 5], 0.0, 1.0);
    let mu = uniform(&mut r, &[5, 5], 0.0, 2.0);
    let k = interior_points(&mut r, 5, 8, 8);
    check(
        |t| {
            let field = VibrationField::new(t[0].clone(), t[1].clone(), 0.1, 1.0, 2.0)?
                .with_coord_scale(0.5);
            let mut c =
                Contour::new(&[[1.0, 1.0], [1.0, 2.0], [2.0, 2.0], [2.0, 1.0], [1.5, 1.5]])?;
            c.k = t[2].clone();
            let (b, m) = sample_field(&field, &c)?;
            Tensor::concat(&[b, m])
        },
        &[beta, mu, k],
        seed,
    )
}

fn case_evolve_step(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 41);
    let n = 6;
    let k = uniform(&mut r, &[n, 2], 0.0, 6.0);
    let k_prev = uniform(&mut r, &[n, 2], 0.0, 6.0);
    let beta = uniform(&mut r, &[n], 0.0, 1.0);
    let mu = uniform(&mut r, &[n], 0.0, 2.0);
    let origin = [r.gen_range(2.0..4.0), r.gen_range(2.0..4.0)];
    check(
        |t| {
            let c = Contour {
                k: t[0].clone(),
                k_prev: t[1].clone(),
                origin,
            };
            Ok(evolve_step(&c, &t[2], &t[3], 0.1)?.k)
        },
        &[k, k_prev, beta, mu],
        seed,
    )
}

fn case_evolve(seed: u64) -> Result<f64> {
    let mut r = rng(seed, 42);
    let head = FieldHead::<f64>::new(&mut model_rng(seed), 3);
    let features = uniform(&mut r, &[3, 4, 4], -2.0, 2.0);
    let ring: Vec<[f64; 2]> = (0..8)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 8.0 + r.gen_range(-0.1..0.1);
            [3.5 + 2.0 * a.sin(), 3.5 + 2.0 * a.cos()]
        })
        .collect();
    let start = Contour::new(&ring)?;
    // No ReLU on this path; the regular step avoids rounding noise.
    with_module_at(FD_STEP, &head, vec![features], seed, |h, t| {
        let field = h.forward(&t[0], 3.0 / 7.0)?;
        Ok(evolve(&start, &field, 4)?.contour.k)
    })
}

/// Every checked operation, grouped by component.
pub fn cases() -> Vec<GradCase> {
    macro_rules! ops {
        ($($group:literal: $($name:literal => $f:ident),+;)+) => {
            vec![$($(GradCase { group: $group, op: $name, case: $f }),+),+]
        };
    }
    ops! {
        "tensor": "relu" => case_relu, "sigmoid" => case_sigmoid, "exp" => case_exp, "ln" => case_ln,
            "square" => case_square, "scale_shift_neg" => case_affine, "add" => case_add, "sub" => case_sub,
            "mul" => case_mul, "broadcast" => case_broadcast, "sum_mean" => case_reductions,
            "softmax" => case_softmax, "matmul" => case_matmul, "bmm" => case_bmm,
            "reshape_transpose" => case_reshape_transpose, "gather" => case_gather,
            "concat_slice" => case_concat_slice, "conv2d" => case_conv2d, "conv1x1" => case_conv1x1,
            "depthwise_conv3x3" => case_depthwise, "batch_norm" => case_batch_norm,
            "bilinear_resize" => case_bilinear_resize, "dropout" => case_dropout;
        "srtcm": "window_partition_merge" => case_window_roundtrip, "window_mhsa" => case_window_mhsa,
            "window_mhsa_padded" => case_window_mhsa_padded, "conv_ffn" => case_conv_ffn, "rt_block" => case_rt_block;
        "omega": "stem" => case_stem, "add_branch" => case_add_branch, "fuse_streams" => case_fuse_streams,
            "cross_modal_fuse" => case_cross_modal_fuse, "segmentation_head" => case_segmentation_head,
            "forward" => case_omega_forward;
        "stsro": "soft_region_representation" => case_soft_regions, "pixel_region_relation" => case_relation,
            "augment_and_classify" => case_augment_classify, "stsro_forward" => case_stsro_forward;
        "losses": "weighted_bce" => case_weighted_bce, "lovasz_hinge" => case_lovasz, "chamfer" => case_chamfer,
            "total_loss" => case_total_loss;
        "vem": "bilinear_sample" => case_bilinear_sample, "sample_field" => case_sample_field,
            "evolve_step" => case_evolve_step, "evolve_with_field_head" => case_evolve;
    }
}

/// Deliberately wrong gradient, for exercising failure reporting: one
/// factor of x·x is detached, so backprop yields x where 2x is correct.
pub fn corrupted_case() -> GradCase {
    GradCase {
        group: "fixture",
        op: "detached_square",
        case: |seed| {
            let x = uniform(&mut rng(seed, 99), &[3, 4], 0.5, 2.0);
            check(|t| t[0].mul(&t[0].detach()), &[x], seed)
        },
    }
}

/// Runs every case `cases` times. `filter` keeps operations whose
/// `group/op` name contains it.
pub fn run_suite(cases_per_op: usize, filter: Option<&str>) -> Vec<OpReport> {
    cases()
        .into_iter()
        .filter_map(|c| {
            let name = format!("{}/{}", c.group, c.op);
            if filter.is_none_or(|f| name.contains(f)) {
                Some(run_cases(&name, cases_per_op, c.case))
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names: Vec<String> = cases()
            .iter()
            .map(|c| format!("{}/{}", c.group, c.op))
            .collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn corrupted_fixture_fails() {
        let c = corrupted_case();
        let r = run_cases("fixture/detached_square", 2, c.case);
        assert!(!r.passed(), "{r:?}");
    }

    #[test]
    fn cheap_ops_pass_a_few_seeds() {
        for r in run_suite(3, Some("tensor/")) {
            assert!(r.passed(), "{r:?}");
        }
    }
}
