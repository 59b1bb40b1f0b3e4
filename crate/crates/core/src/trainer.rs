//! Seeded training, evaluation and the ablation matrix.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointMeta;
use crate::dataforge::{
    prepare_cross_scale, AugmentConfig, Augmentation, Confusion, Dataset, DatasetConfig,
    DualModalTile, Grouping,
};
use crate::error::{Error, Result};
use crate::losses::{chamfer, class_weights, total_loss, LossBreakdown, LossWeights};
use crate::model::{match_contours, TerraceNet};
use crate::nn::{ModelRng, Module};
use crate::omega::{InputMode, NetworkConfig};
use crate::optim::{clip_global_norm, cosine_lr, gradients, AdamW, AdamWConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vem::STEPS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grouping: Grouping,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Fraction of steps trained without the contour term.
    pub vem_warmup: f64,
    /// Field updates per contour during training.
    pub vem_steps: usize,
    /// Validation interval in steps; 0 means once per pass over the
    /// training split.
    pub eval_every: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 600,
            batch_size: 4,
            seed: 0,
            grouping: Grouping::B,
            clip_norm: 5.0,
            vem_warmup: 0.2,
            vem_steps: 20,
            eval_every: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > self.lr_min && self.lr_min > 0.0) {
            return Err(Error::Config(format!(
                "need lr0 > lr_min > 0, got {} and {}",
                self.lr0, self.lr_min
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.vem_warmup)
            || self.clip_norm < 0.0
            || self.weight_decay < 0.0
        {
            return Err(Error::Config(
                "vem_warmup must lie in [0, 1]; clip_norm and weight_decay ≥ 0".into(),
            ));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// First step that includes the contour term.
    pub fn vem_start(&self) -> usize {
        (self.vem_warmup * self.steps as f64).ceil() as usize
    }
}

/// Complete run description; one TOML file with these four tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

impl ExperimentConfig {
    /// Network configuration with the input size implied by the grouping.
    pub fn resolved_network(&self) -> NetworkConfig {
        NetworkConfig {
            input_size: self.train.grouping.input_size(self.data.synth.size),
            ..self.network.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        self.resolved_network().validate()?;
        self.train.validate()?;
        self.loss.validate()
    }

    pub fn meta(&self, step: usize) -> CheckpointMeta {
        CheckpointMeta {
            network: self.resolved_network(),
            grouping: self.train.grouping,
            native_size: self.data.synth.size,
            step,
        }
    }
}

/// Per-step loss components, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub aux: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValRow {
    pub step: usize,
    pub miou: f64,
    pub oa: f64,
}

pub struct TrainOutcome<T: Scalar> {
    /// Weights with the best validation mIoU (the final ones without a
    /// validation split, the last finite ones after an abort).
    pub model: TerraceNet<T>,
    pub meta: CheckpointMeta,
    pub log: Vec<LogRow>,
    pub val: Vec<ValRow>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

/// Loss of one prepared tile. The contour term is included when
/// `with_contours` is set and the model predicts at least one contour that
/// can be matched to a truth polygon.
pub fn tile_loss<T: Scalar>(
    model: &TerraceNet<T>,
    tile: &DualModalTile,
    loss: &LossWeights,
    with_contours: bool,
    vem_steps: usize,
    rng: Option<&mut ModelRng>,
) -> Result<(Tensor<T>, LossBreakdown)> {
    let input = tile.net_input(model.cfg().input_size)?;
    let pred = model.forward(&input, tile.label.size, rng)?;
    let labels = tile.labels::<T>();
    let pairs = if with_contours && loss.theta > 0.0 {
        match_contours(&model.contours(&pred, vem_steps)?, &tile.truth_rings_rc())?
    } else {
        Vec::new()
    };
    total_loss(
        &pred.logits,
        pred.aux_logits.as_ref(),
        &pairs,
        &labels,
        class_weights(&labels),
        loss,
    )
}

/// Mean deterministic (dropout-free) loss over prepared tiles.
pub fn eval_loss<T: Scalar>(
    model: &TerraceNet<T>,
    tiles: &[DualModalTile],
    loss: &LossWeights,
    with_contours: bool,
    vem_steps: usize,
) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for t in tiles {
        let (_, br) = tile_loss(model, t, loss, with_contours, vem_steps, None)?;
        acc.add_scaled(&br, 1.0 / tiles.len() as f64);
    }
    Ok(acc)
}

fn snapshot<T: Scalar>(model: &TerraceNet<T>) -> Vec<Tensor<T>> {
    model
        .parameters()
        .into_iter()
        .map(|(_, t)| t.detach().to_leaf(true))
        .collect()
}

/// Observer for training progress.
pub trait Progress {
    fn step(&mut self, _row: &LogRow) {}
    fn validation(&mut self, _row: &ValRow) {}
}

impl Progress for () {}

/// Trains on `train` tiles (native resolution) and selects the best weights
/// on `val`. Optionally calls `probe` after every step with the current
/// model; it may request an early stop by returning `true`.
pub fn train_tiles<T: Scalar>(
    cfg: &ExperimentConfig,
    train: &[&DualModalTile],
    val: &[&DualModalTile],
    progress: &mut dyn Progress,
    mut probe: Option<&mut dyn FnMut(usize, &TerraceNet<T>) -> Result<bool>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let tc = &cfg.train;
    let mut model = TerraceNet::<T>::new(
        &cfg.resolved_network(),
        &mut ModelRng::seed_from_u64(tc.seed),
    )?;
    let mut opt = AdamW::new(&model, tc.adamw());
    let prep = |ts: &[&DualModalTile]| -> Result<Vec<DualModalTile>> {
        ts.iter()
            .map(|t| prepare_cross_scale(t, tc.grouping))
            .collect()
    };
    let (train_p, val_p) = (prep(train)?, prep(val)?);
    let mut data_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0xda7a);
    let mut drop_rng = ModelRng::seed_from_u64(tc.seed ^ 0xd509);
    let aug_cfg = AugmentConfig::default();
    let per_pass = train_p.len().div_ceil(tc.batch_size);
    let eval_every = if tc.eval_every == 0 {
        per_pass
    } else {
        tc.eval_every
    };

    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(tc.steps);
    let mut val_log = Vec::new();
    let mut best: Option<(f64, Vec<Tensor<T>>, usize)> = None;
    let mut last_good = snapshot(&model);
    let mut aborted = None;
    let mut done = 0;

    for step in 0..tc.steps {
        let lr = cosine_lr(tc.lr0, tc.lr_min, step, tc.steps);
        let with_contours = step >= tc.vem_start();
        let mut row = LogRow {
            step,
            lr,
            l1: 0.0,
            l2: 0.0,
            l3: 0.0,
            aux: 0.0,
            total: 0.0,
            grad_norm: 0.0,
        };
        let mut br = LossBreakdown::default();
        let b = tc.batch_size.min(train_p.len());
        for _ in 0..b {
            if order.is_empty() {
                order = (0..train_p.len()).collect();
                order.shuffle(&mut data_rng);
            }
            let i = order.pop().expect("refilled above");
            let tile = if tc.augment {
                Augmentation::draw(&mut data_rng, &aug_cfg).apply(&train_p[i])
            } else {
                train_p[i].clone()
            };
            let (loss, parts) = tile_loss(
                &model,
                &tile,
                &cfg.loss,
                with_contours,
                tc.vem_steps,
                Some(&mut drop_rng),
            )?;
            loss.scale(T::of(1.0 / b as f64)).backward()?;
            br.add_scaled(&parts, 1.0 / b as f64);
        }
        let mut grads = gradients(&model);
        let norm = clip_global_norm(&mut grads, tc.clip_norm);
        (row.l1, row.l2, row.l3, row.aux, row.total, row.grad_norm) =
            (br.l1, br.l2, br.l3, br.aux, br.total, norm);
        if !br.total.is_finite() || !norm.is_finite() {
            aborted = Some(format!(
                "non-finite loss {} or gradient norm {norm} at step {step}",
                br.total
            ));
            model.set_parameters(&last_good)?;
            log.push(row);
            progress.step(&row);
            break;
        }
        opt.step(&mut model, &grads, lr)?;
        last_good = snapshot(&model);
        log.push(row);
        progress.step(&row);
        done = step + 1;

        if !val_p.is_empty() && (done % eval_every == 0 || done == tc.steps) {
            let (miou, oa) = evaluate_prepared(&model, &val_p)?.miou_oa();
            let v = ValRow {
                step: done,
                miou,
                oa,
            };
            val_log.push(v);
            progress.validation(&v);
            if best.as_ref().is_none_or(|(m, _, _)| miou > *m) {
                best = Some((miou, snapshot(&model), done));
            }
        }
        if let Some(p) = probe.as_mut() {
            if p(done, &model)? {
                break;
            }
        }
    }
    let mut step = done;
    if aborted.is_none() {
        if let Some((_, params, at)) = best {
            model.set_parameters(&params)?;
            step = at;
        }
    }
    Ok(TrainOutcome {
        model,
        meta: cfg.meta(step),
        log,
        val: val_log,
        aborted,
    })
}

/// Trains on the dataset's train split, validating on its val split.
pub fn train<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset,
    progress: &mut dyn Progress,
) -> Result<TrainOutcome<T>> {
    train_tiles(
        cfg,
        &data.subset(&data.split.train),
        &data.subset(&data.split.val),
        progress,
        None,
    )
}

/// Confusion counts and contour distances of one evaluation.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub confusion: Confusion,
    /// Per matched contour, the chamfer distance to its truth polygon.
    pub chamfer: Vec<f64>,
}

impl Evaluation {
    pub fn miou_oa(&self) -> (f64, f64) {
        (self.confusion.miou(), self.confusion.oa())
    }

    pub fn mean_chamfer(&self) -> Option<f64> {
        (!self.chamfer.is_empty())
            .then(|| self.chamfer.iter().sum::<f64>() / self.chamfer.len() as f64)
    }
}

fn evaluate_prepared<T: Scalar>(
    model: &TerraceNet<T>,
    tiles: &[DualModalTile],
) -> Result<Evaluation> {
    let mut ev = Evaluation::default();
    for t in tiles {
        let pred = model.forward(&t.net_input(model.cfg().input_size)?, t.label.size, None)?;
        ev.confusion.add(&pred.mask(), &t.label.mask())?;
    }
    Ok(ev)
}

/// Deterministic evaluation of native tiles under `grouping`; with
/// `polygons`, contours are evolved for the default number of steps and
/// compared with the truth polygons.
pub fn evaluate<T: Scalar>(
    model: &TerraceNet<T>,
    tiles: &[&DualModalTile],
    grouping: Grouping,
    polygons: bool,
) -> Result<Evaluation> {
    let expected = grouping.input_size(tiles.first().map_or(0, |t| t.rgb.size));
    if !tiles.is_empty() && expected != model.cfg().input_size {
        return Err(Error::Config(format!(
            "model input size {} does not match grouping {grouping} on {} px tiles (needs {expected})",
            model.cfg().input_size,
            tiles[0].rgb.size
        )));
    }
    let mut ev = Evaluation::default();
    for t in tiles {
        let t = prepare_cross_scale(t, grouping)?;
        let pred = model.forward(&t.net_input(model.cfg().input_size)?, t.label.size, None)?;
        ev.confusion.add(&pred.mask(), &t.label.mask())?;
        if polygons {
            let contours = model.contours(&pred, STEPS)?;
            for pair in match_contours(&contours, &t.truth_rings_rc())? {
                ev.chamfer.push(
                    chamfer(&pair.predicted.detach(), &pair.reference)?
                        .item()
                        .as_f64(),
                );
            }
        }
    }
    Ok(ev)
}

/// One row of an evaluation or ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: InputMode,
    pub stsro: bool,
    pub grouping: Grouping,
    pub miou: f64,
    pub oa: f64,
    pub chamfer: Option<f64>,
    pub tiles: usize,
    pub train_steps: usize,
    pub seconds: f64,
}

pub fn report_row<T: Scalar>(
    model: &TerraceNet<T>,
    grouping: Grouping,
    ev: &Evaluation,
    tiles: usize,
) -> ReportRow {
    let (miou, oa) = ev.miou_oa();
    ReportRow {
        mode: model.cfg().input_mode,
        stsro: model.cfg().stsro_enabled,
        grouping,
        miou,
        oa,
        chamfer: ev.mean_chamfer(),
        tiles,
        train_steps: 0,
        seconds: 0.0,
    }
}

/// CSV text of report rows with a header line.
pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record([
            "mode",
            "stsro",
            "grouping",
            "miou",
            "oa",
            "chamfer",
            "tiles",
            "train_steps",
            "seconds",
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
}

/// CSV text of training or validation log rows.
pub fn log_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is UTF-8"))
}

/// One configuration of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub mode: InputMode,
    pub stsro: bool,
    pub grouping: Grouping,
}

/// All 4 × 2 × 3 = 24 cells.
pub fn all_cells() -> Vec<Cell> {
    let mut out = Vec::with_capacity(24);
    for mode in InputMode::ALL {
        for stsro in [true, false] {
            for grouping in Grouping::ALL {
                out.push(Cell {
                    mode,
                    stsro,
                    grouping,
                });
            }
        }
    }
    out
}

/// Trains and tests each cell from the same base configuration and seeds.
pub fn ablation_matrix<T: Scalar>(
    base: &ExperimentConfig,
    data: &Dataset,
    cells: &[Cell],
    progress: &mut dyn FnMut(&ReportRow),
) -> Result<Vec<ReportRow>> {
    let test = data.subset(&data.split.test);
    let mut rows = Vec::with_capacity(cells.len());
    for c in cells {
        let mut cfg = base.clone();
        cfg.network.input_mode = c.mode;
        cfg.network.stsro_enabled = c.stsro;
        cfg.train.grouping = c.grouping;
        let start = Instant::now();
        let out = train::<T>(&cfg, data, &mut ())?;
        if let Some(why) = out.aborted {
            return Err(Error::Numeric(format!(
                "cell {}/{}/{}: {why}",
                c.mode, c.stsro, c.grouping
            )));
        }
        let ev = evaluate(&out.model, &test, c.grouping, false)?;
        let mut row = report_row(&out.model, c.grouping, &ev, test.len());
        row.train_steps = out.log.len();
        row.seconds = start.elapsed().as_secs_f64();
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}
