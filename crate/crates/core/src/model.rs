//! Full network: encoder, refinement (or a plain classifier) and the
//! vibration-field head, plus the contour step that links predictions to
//! vertex supervision.

use crate::error::Result;
use crate::losses::{margin, ContourPair};
use crate::nn::{join, ModelRng, Module, Pointwise};
use crate::omega::{NetInput, NetworkConfig, OmegaNet, REGIONS};
use crate::scalar::Scalar;
use crate::stsro::{plain_classify, stsro_forward, Stsro};
use crate::tensor::Tensor;
use crate::vem::{
    evolve, init_contour, outset_ring, resample_closed, Contour, FieldHead, VibrationField,
    INIT_OUTSET, VERTICES,
};

/// Contours per tile taken into the chamfer term.
pub const MAX_CONTOURS: usize = 8;

#[derive(Clone, Debug)]
pub enum Refinement<T: Scalar> {
    Stsro(Stsro<T>),
    Plain(Pointwise<T>),
}

#[derive(Clone, Debug)]
pub struct TerraceNet<T: Scalar> {
    pub encoder: OmegaNet<T>,
    pub refine: Refinement<T>,
    pub field: FieldHead<T>,
}

pub struct Prediction<T: Scalar> {
    /// 2×L×L class logits at label resolution L.
    pub logits: Tensor<T>,
    /// Upsampled soft-region scores when refinement is on.
    pub aux_logits: Option<Tensor<T>>,
    /// D×S/4×S/4 features driving the field head.
    pub features: Tensor<T>,
    pub out_size: usize,
}

impl<T: Scalar> Prediction<T> {
    /// Terrace mask at label resolution (positive margin).
    pub fn mask(&self) -> Vec<bool> {
        let m = margin(&self.logits).expect("logits are 2×L×L");
        m.data().iter().map(|v| *v > T::zero()).collect()
    }

    /// Terrace probability σ(margin) per pixel.
    pub fn probability(&self) -> Vec<f64> {
        let m = margin(&self.logits).expect("logits are 2×L×L");
        m.data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v.as_f64()).exp()))
            .collect()
    }
}

impl<T: Scalar> TerraceNet<T> {
    pub fn new(cfg: &NetworkConfig, rng: &mut ModelRng) -> Result<Self> {
        let encoder = OmegaNet::new(cfg, rng)?;
        let refine = if cfg.stsro_enabled {
            Refinement::Stsro(Stsro::new(rng, cfg.head_width, cfg.key_width))
        } else {
            Refinement::Plain(Pointwise::new(rng, cfg.head_width, REGIONS, 1.0))
        };
        let field = FieldHead::new(rng, cfg.head_width);
        Ok(Self {
            encoder,
            refine,
            field,
        })
    }

    pub fn cfg(&self) -> &NetworkConfig {
        &self.encoder.cfg
    }

    /// Logits at `out_size`; dropout is active only when `rng` is supplied.
    pub fn forward(
        &self,
        input: &NetInput<T>,
        out_size: usize,
        rng: Option<&mut ModelRng>,
    ) -> Result<Prediction<T>> {
        let enc = self.encoder.forward(input, rng)?;
        Ok(match &self.refine {
            Refinement::Stsro(p) => {
                let o = stsro_forward(&enc.pixel_features, &enc.soft_regions, p, out_size)?;
                Prediction {
                    logits: o.logits,
                    aux_logits: Some(o.aux_logits),
                    features: o.augmented,
                    out_size,
                }
            }
            Refinement::Plain(cls) => Prediction {
                logits: plain_classify(&enc.pixel_features, cls, out_size)?,
                aux_logits: None,
                features: enc.pixel_features,
                out_size,
            },
        })
    }

    /// Vibration field on the feature grid, addressed in label pixels.
    pub fn vibration_field(&self, pred: &Prediction<T>) -> Result<VibrationField<T>> {
        let h = pred.features.shape()[1];
        let scale = if pred.out_size > 1 {
            (h - 1) as f64 / (pred.out_size - 1) as f64
        } else {
            0.0
        };
        self.field.forward(&pred.features, scale)
    }

    /// Evolved contours of the predicted mask, `steps` field updates each.
    pub fn contours(&self, pred: &Prediction<T>, steps: usize) -> Result<Vec<Contour<T>>> {
        let l = pred.out_size;
        let field = self.vibration_field(pred)?;
        let (init, _) = init_contour::<T>(&pred.mask(), l, l, VERTICES)?;
        init.iter()
            .take(MAX_CONTOURS)
            .map(|c| {
                let start = Contour::new(&outset_ring(&c.vertices(), INIT_OUTSET))?;
                Ok(evolve(&start, &field, steps)?.contour)
            })
            .collect()
    }
}

fn centroid(ring: &[[f64; 2]]) -> [f64; 2] {
    let n = ring.len().max(1) as f64;
    let s = ring
        .iter()
        .fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

/// Pairs each contour with the truth ring (row, col) whose centroid is
/// nearest to its own; the truth ring is resampled to the contour's vertex
/// count. No truth rings means no pairs.
pub fn match_contours<T: Scalar>(
    contours: &[Contour<T>],
    truth_rc: &[Vec<[f64; 2]>],
) -> Result<Vec<ContourPair<T>>> {
    if truth_rc.is_empty() {
        return Ok(Vec::new());
    }
    let centres: Vec<[f64; 2]> = truth_rc.iter().map(|r| centroid(r)).collect();
    contours
        .iter()
        .map(|c| {
            let cc = centroid(&c.vertices());
            let best = centres
                .iter()
                .enumerate()
                .map(|(i, t)| (i, (t[0] - cc[0]).powi(2) + (t[1] - cc[1]).powi(2)))
                .fold(
                    (0, f64::INFINITY),
                    |acc, x| if x.1 < acc.1 { x } else { acc },
                )
                .0;
            let dense = resample_closed(&truth_rc[best], c.len());
            let reference = Tensor::new(
                dense
                    .iter()
                    .flat_map(|p| [T::of(p[0]), T::of(p[1])])
                    .collect(),
                &[c.len(), 2],
            )?;
            Ok(ContourPair {
                predicted: c.k.clone(),
                reference,
            })
        })
        .collect()
}

impl<T: Scalar> Module<T> for TerraceNet<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.encoder.visit(&join(p, "encoder"), f);
        match &self.refine {
            Refinement::Stsro(s) => s.visit(&join(p, "stsro"), f),
            Refinement::Plain(c) => c.visit(&join(p, "classifier"), f),
        }
        self.field.visit(&join(p, "field"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_mut(&join(p, "encoder"), f);
        match &mut self.refine {
            Refinement::Stsro(s) => s.visit_mut(&join(p, "stsro"), f),
            Refinement::Plain(c) => c.visit_mut(&join(p, "classifier"), f),
        }
        self.field.visit_mut(&join(p, "field"), f);
    }
}
