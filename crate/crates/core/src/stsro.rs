//! Region-relation refinement head.
//!
//! Soft region scores are normalized spatially into per-region pixel
//! weights; the weighted sums of pixel features give one representation per
//! region. Every pixel then forms a distribution over regions from the
//! similarity of transformed pixel and region keys, gathers a context vector
//! from the regions, and is classified from its own features concatenated
//! with that context.

use crate::error::{Error, Result};
use crate::nn::{
    init_const, init_uniform, join, ModelRng, Module, Pointwise, PointwiseNormRelu, RELU_GAIN,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Region scores and their spatially normalized weights, both M×H×W.
#[derive(Clone, Debug)]
pub struct SoftObjectRegions<T: Scalar> {
    pub scores: Tensor<T>,
    pub weights: Tensor<T>,
}

impl<T: Scalar> SoftObjectRegions<T> {
    /// Spatial softmax of each region's scores.
    pub fn from_scores(scores: &Tensor<T>) -> Result<Self> {
        let (m, h, w) = match scores.shape() {
            [m, h, w] => (*m, *h, *w),
            s => {
                return Err(Error::dim(
                    "soft_regions",
                    format!("expected M×H×W, got {s:?}"),
                ))
            }
        };
        let weights = scores
            .reshape(&[m, h * w])?
            .softmax(1)?
            .reshape(&[m, h, w])?;
        Ok(Self {
            scores: scores.clone(),
            weights,
        })
    }

    pub fn regions(&self) -> usize {
        self.scores.shape()[0]
    }
}

/// One row per region, M×D.
#[derive(Clone, Debug)]
pub struct RegionBank<T: Scalar> {
    pub p: Tensor<T>,
}

fn flat<T: Scalar>(op: &'static str, v: &Tensor<T>) -> Result<(Tensor<T>, usize, usize, usize)> {
    match v.shape() {
        [d, h, w] => Ok((v.reshape(&[*d, h * w])?, *d, *h, *w)),
        s => Err(Error::dim(op, format!("expected D×H×W, got {s:?}"))),
    }
}

/// `p_m = Σ_i ñ_mi v_i`.
pub fn region_representation<T: Scalar>(
    v: &Tensor<T>,
    regions: &SoftObjectRegions<T>,
) -> Result<RegionBank<T>> {
    let (vf, _, h, w) = flat("region_representation", v)?;
    let m = regions.regions();
    if regions.weights.shape()[1..] != [h, w] {
        return Err(Error::dim(
            "region_representation",
            format!(
                "features {:?} vs region weights {:?}",
                v.shape(),
                regions.weights.shape()
            ),
        ));
    }
    let n = regions.weights.reshape(&[m, h * w])?;
    Ok(RegionBank {
        p: n.matmul_nt(&vf)?,
    })
}

/// Dense row transform `y = relu?(x·Wᵀ + b)` for region vectors.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar> {
    /// out × in.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub relu: bool,
}

impl<T: Scalar> Linear<T> {
    pub fn new(rng: &mut ModelRng, c_in: usize, c_out: usize, relu: bool) -> Self {
        let gain = if relu { RELU_GAIN } else { 1.0 };
        Self {
            weight: init_uniform(rng, &[c_out, c_in], c_in, gain),
            bias: init_const(&[c_out], 0.0),
            relu,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul_nt(&self.weight)?.add_broadcast(&self.bias, 1)?;
        Ok(if self.relu { y.relu() } else { y })
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(p, "weight"), &self.weight);
        f(&join(p, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(p, "weight"), &mut self.weight);
        f(&join(p, "bias"), &mut self.bias);
    }
}

/// Key transforms: `pixel` for pixel features (1×1 conv, norm, ReLU) and
/// `region` for region representations.
#[derive(Clone, Debug)]
pub struct RelationTransforms<T: Scalar> {
    pub pixel: PointwiseNormRelu<T>,
    pub region: Linear<T>,
}

impl<T: Scalar> Module<T> for RelationTransforms<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.pixel.visit(&join(p, "pixel"), f);
        self.region.visit(&join(p, "region"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.pixel.visit_mut(&join(p, "pixel"), f);
        self.region.visit_mut(&join(p, "region"), f);
    }
}

/// Softmax over regions of `region_keys · pixel_keys / √K`.
///
/// `pixel_keys` is K×N, `region_keys` M×K; the result is M×N and every
/// column is a distribution.
pub fn relation_from_keys<T: Scalar>(
    pixel_keys: &Tensor<T>,
    region_keys: &Tensor<T>,
) -> Result<Tensor<T>> {
    let k = pixel_keys.shape()[0];
    region_keys
        .matmul(pixel_keys)?
        .scale(T::one() / T::of_usize(k).sqrt())
        .softmax(0)
}

/// Pixel-to-region distribution μ, M×H×W.
pub fn pixel_region_relation<T: Scalar>(
    v: &Tensor<T>,
    bank: &RegionBank<T>,
    transforms: &RelationTransforms<T>,
) -> Result<Tensor<T>> {
    let (_, _, h, w) = flat("pixel_region_relation", v)?;
    let keys = transforms.pixel.forward(v)?;
    let kd = keys.shape()[0];
    let mu = relation_from_keys(
        &keys.reshape(&[kd, h * w])?,
        &transforms.region.forward(&bank.p)?,
    )?;
    mu.reshape(&[bank.p.shape()[0], h, w])
}

/// Context gathering and classification.
#[derive(Clone, Debug)]
pub struct Classifier<T: Scalar> {
    /// Region value transform.
    pub value: Linear<T>,
    /// Projection of `[v ‖ context]` back to D.
    pub fuse: PointwiseNormRelu<T>,
    pub logits: Pointwise<T>,
}

impl<T: Scalar> Module<T> for Classifier<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.value.visit(&join(p, "value"), f);
        self.fuse.visit(&join(p, "fuse"), f);
        self.logits.visit(&join(p, "logits"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.value.visit_mut(&join(p, "value"), f);
        self.fuse.visit_mut(&join(p, "fuse"), f);
        self.logits.visit_mut(&join(p, "logits"), f);
    }
}

/// Context per pixel, D×H×W: `Σ_m μ_m value(p_m)`.
pub fn gather_context<T: Scalar>(
    bank: &RegionBank<T>,
    mu: &Tensor<T>,
    value: &Linear<T>,
) -> Result<Tensor<T>> {
    let (m, h, w) = match mu.shape() {
        [m, h, w] => (*m, *h, *w),
        s => {
            return Err(Error::dim(
                "gather_context",
                format!("expected M×H×W, got {s:?}"),
            ))
        }
    };
    let vals = value.forward(&bank.p)?;
    let d = vals.shape()[1];
    vals.matmul_tn(&mu.reshape(&[m, h * w])?)?
        .reshape(&[d, h, w])
}

/// Returns (logits 2×S×S, augmented features D×H×W).
pub fn augment_and_classify<T: Scalar>(
    v: &Tensor<T>,
    bank: &RegionBank<T>,
    mu: &Tensor<T>,
    params: &Classifier<T>,
    out_size: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let context = gather_context(bank, mu, &params.value)?;
    let augmented = params
        .fuse
        .forward(&Tensor::concat(&[v.clone(), context])?)?;
    let logits = params
        .logits
        .forward(&augmented)?
        .bilinear_resize(out_size, out_size)?;
    Ok((logits, augmented))
}

/// Parameters of the full refinement head.
#[derive(Clone, Debug)]
pub struct Stsro<T: Scalar> {
    pub transforms: RelationTransforms<T>,
    pub classifier: Classifier<T>,
}

impl<T: Scalar> Stsro<T> {
    pub fn new(rng: &mut ModelRng, width: usize, key_width: usize) -> Self {
        Self {
            transforms: RelationTransforms {
                pixel: PointwiseNormRelu::new(rng, width, key_width),
                region: Linear::new(rng, width, key_width, true),
            },
            classifier: Classifier {
                value: Linear::new(rng, width, width, true),
                fuse: PointwiseNormRelu::new(rng, 2 * width, width),
                logits: Pointwise::new(rng, width, 2, 1.0),
            },
        }
    }
}

impl<T: Scalar> Module<T> for Stsro<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.transforms.visit(&join(p, "relation"), f);
        self.classifier.visit(&join(p, "classifier"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.transforms.visit_mut(&join(p, "relation"), f);
        self.classifier.visit_mut(&join(p, "classifier"), f);
    }
}

pub struct StsroOutput<T: Scalar> {
    /// 2×S×S.
    pub logits: Tensor<T>,
    /// Soft-region scores upsampled to S×S.
    pub aux_logits: Tensor<T>,
    /// D×H×W features after context augmentation.
    pub augmented: Tensor<T>,
    pub regions: SoftObjectRegions<T>,
    /// M×H×W pixel-to-region distribution.
    pub relation: Tensor<T>,
}

pub fn stsro_forward<T: Scalar>(
    pixel_features: &Tensor<T>,
    soft_regions: &Tensor<T>,
    params: &Stsro<T>,
    out_size: usize,
) -> Result<StsroOutput<T>> {
    let regions = SoftObjectRegions::from_scores(soft_regions)?;
    let bank = region_representation(pixel_features, &regions)?;
    let relation = pixel_region_relation(pixel_features, &bank, &params.transforms)?;
    let (logits, augmented) = augment_and_classify(
        pixel_features,
        &bank,
        &relation,
        &params.classifier,
        out_size,
    )?;
    let aux_logits = soft_regions.bilinear_resize(out_size, out_size)?;
    Ok(StsroOutput {
        logits,
        aux_logits,
        augmented,
        regions,
        relation,
    })
}

/// Classification head used when the refinement is switched off.
pub fn plain_classify<T: Scalar>(
    pixel_features: &Tensor<T>,
    cls: &Pointwise<T>,
    out_size: usize,
) -> Result<Tensor<T>> {
    cls.forward(pixel_features)?
        .bilinear_resize(out_size, out_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_t(shape: &[usize], rng: &mut ModelRng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    #[test]
    fn uniform_weights_give_feature_mean() {
        let mut rng = ModelRng::seed_from_u64(0);
        let v = rand_t(&[3, 2, 3], &mut rng);
        let regions = SoftObjectRegions::from_scores(&Tensor::zeros(&[2, 2, 3])).unwrap();
        let bank = region_representation(&v, &regions).unwrap();
        for m in 0..2 {
            for d in 0..3 {
                let mean: f64 = v.data()[d * 6..(d + 1) * 6].iter().sum::<f64>() / 6.0;
                assert!((bank.p.data()[m * 3 + d] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_weights_pick_a_pixel() {
        let mut rng = ModelRng::seed_from_u64(1);
        let v = rand_t(&[2, 2, 2], &mut rng);
        let weights = Tensor::new(vec![0.0, 0.0, 1.0, 0.0], &[1, 2, 2]).unwrap();
        let regions = SoftObjectRegions {
            scores: weights.clone(),
            weights,
        };
        let bank = region_representation(&v, &regions).unwrap();
        assert_eq!(bank.p.data(), &[v.data()[2], v.data()[6]]);
    }

    #[test]
    fn four_pixel_two_region_direct_sum() {
        let scores =
            Tensor::<f64>::new(vec![0.5, -1.0, 2.0, 0.0, 1.0, 1.0, -0.5, 0.3], &[2, 2, 2]).unwrap();
        let v = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.5], &[2, 2, 2]).unwrap();
        let regions = SoftObjectRegions::from_scores(&scores).unwrap();
        let bank = region_representation(&v, &regions).unwrap();
        let s = scores.data();
        for m in 0..2 {
            let z: f64 = (0..4).map(|i| s[m * 4 + i].exp()).sum();
            for d in 0..2 {
                let p: f64 = (0..4)
                    .map(|i| s[m * 4 + i].exp() / z * v.data()[d * 4 + i])
                    .sum();
                assert!((bank.p.data()[m * 2 + d] - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_invariance_of_region_weights() {
        let mut rng = ModelRng::seed_from_u64(2);
        let s = rand_t(&[2, 3, 3], &mut rng);
        let mut shifted = s.data().to_vec();
        for x in &mut shifted[..9] {
            *x += 3.0;
        }
        let a = SoftObjectRegions::from_scores(&s).unwrap();
        let b = SoftObjectRegions::from_scores(&Tensor::new(shifted, &[2, 3, 3]).unwrap()).unwrap();
        for i in 0..18 {
            assert!((a.weights.data()[i] - b.weights.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_relations_are_uniform() {
        let keys = Tensor::<f64>::new(vec![0.3, -0.2, 0.7, 0.1], &[2, 2]).unwrap();
        let regions = Tensor::new(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap();
        let keys_same = Tensor::<f64>::new(vec![0.3, 0.3, 0.3, 0.3], &[2, 2]).unwrap();
        let mu = relation_from_keys(&keys_same, &regions).unwrap();
        assert!(mu.data().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let mu = relation_from_keys(&keys, &regions.slice0(0, 2).unwrap()).unwrap();
        assert!(mu.data().iter().all(|x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn two_pixel_identity_transform_softmax() {
        // Keys are the raw features: D=2, M=2, two pixels.
        let v = Tensor::<f64>::new(vec![1.0, -0.5, 0.2, 0.8], &[2, 2]).unwrap();
        let p = Tensor::new(vec![0.4, 0.1, -0.3, 0.9], &[2, 2]).unwrap();
        let mu = relation_from_keys(&v, &p).unwrap();
        for i in 0..2 {
            let l: Vec<f64> = (0..2)
                .map(|m| {
                    (p.data()[m * 2] * v.data()[i] + p.data()[m * 2 + 1] * v.data()[2 + i])
                        / 2f64.sqrt()
                })
                .collect();
            let z = l[0].exp() + l[1].exp();
            for m in 0..2 {
                assert!((mu.data()[m * 2 + i] - l[m].exp() / z).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_regions_give_constant_context() {
        let mut rng = ModelRng::seed_from_u64(3);
        let value = Linear::<f64>::new(&mut rng, 3, 3, true);
        let bank = RegionBank {
            p: Tensor::<f64>::new([0.2, -0.4, 0.9].repeat(2), &[2, 3]).unwrap(),
        };
        let mu = Tensor::full(&[2, 2, 2], 0.5);
        let ctx = gather_context(&bank, &mu, &value).unwrap();
        for d in 0..3 {
            let row = &ctx.data()[d * 4..(d + 1) * 4];
            assert!(row.iter().all(|x| (x - row[0]).abs() < 1e-15));
        }
    }

    #[test]
    fn single_region_context_is_spatially_constant() {
        let mut rng = ModelRng::seed_from_u64(4);
        let head = Stsro::<f64>::new(&mut rng, 4, 3);
        let v = rand_t(&[4, 3, 3], &mut rng);
        let regions = SoftObjectRegions::from_scores(&rand_t(&[1, 3, 3], &mut rng)).unwrap();
        let bank = region_representation(&v, &regions).unwrap();
        let mu = pixel_region_relation(&v, &bank, &head.transforms).unwrap();
        assert!(mu.data().iter().all(|&x| x == 1.0));
        let ctx = gather_context(&bank, &mu, &head.classifier.value).unwrap();
        for d in 0..4 {
            let row = &ctx.data()[d * 9..(d + 1) * 9];
            assert!(row.iter().all(|x| x == &row[0]));
        }
    }

    #[test]
    fn forward_matches_composition_and_shapes() {
        let mut rng = ModelRng::seed_from_u64(5);
        let head = Stsro::<f64>::new(&mut rng, 4, 3);
        let v = rand_t(&[4, 4, 4], &mut rng);
        let s = rand_t(&[2, 4, 4], &mut rng);
        let out = stsro_forward(&v, &s, &head, 16).unwrap();
        assert_eq!(out.logits.shape(), &[2, 16, 16]);
        assert_eq!(out.aux_logits.shape(), &[2, 16, 16]);

        let regions = SoftObjectRegions::from_scores(&s).unwrap();
        let bank = region_representation(&v, &regions).unwrap();
        let mu = pixel_region_relation(&v, &bank, &head.transforms).unwrap();
        let (logits, _) = augment_and_classify(&v, &bank, &mu, &head.classifier, 16).unwrap();
        assert_eq!(out.logits.data(), logits.data());

        let plain = plain_classify(&v, &Pointwise::new(&mut rng, 4, 2, 1.0), 16).unwrap();
        assert_eq!(plain.shape(), out.logits.shape());
    }

    #[test]
    fn normalizations_hold() {
        let mut rng = ModelRng::seed_from_u64(6);
        let head = Stsro::<f64>::new(&mut rng, 6, 4);
        let v = rand_t(&[6, 5, 5], &mut rng);
        let out = stsro_forward(&v, &rand_t(&[2, 5, 5], &mut rng).scale(4.0), &head, 20).unwrap();
        for m in 0..2 {
            let s: f64 = out.regions.weights.data()[m * 25..(m + 1) * 25]
                .iter()
                .sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for i in 0..25 {
            let s = out.relation.data()[i] + out.relation.data()[25 + i];
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn soft_region_scores_get_gradient_through_weights_and_aux() {
        let mut rng = ModelRng::seed_from_u64(7);
        let head = Stsro::<f64>::new(&mut rng, 4, 3);
        let v = rand_t(&[4, 3, 3], &mut rng);
        let s = rand_t(&[2, 3, 3], &mut rng).to_leaf(true);
        let w = rand_t(&[2, 6, 6], &mut rng);
        let out = stsro_forward(&v, &s, &head, 6).unwrap();
        out.logits.mul(&w).unwrap().sum().backward().unwrap();
        let via_weights = s.grad().unwrap();
        assert!(via_weights.iter().any(|g| *g != 0.0));
        s.zero_grad();
        out.aux_logits.mul(&w).unwrap().sum().backward().unwrap();
        assert!(s.grad().unwrap().iter().any(|g| *g != 0.0));
    }
}
