//! Dual-branch multi-resolution encoder and segmentation head.
//!
//! Each modality branch starts from a convolutional stem at 1/4 resolution.
//! Every stage after the first appends a lower-resolution stream, runs
//! resolution transformer blocks on every stream, exchanges information
//! across resolutions, and (for two branches) fuses the modalities stream by
//! stream. The fused pyramid of the last stage is upsampled, concatenated
//! and projected to per-pixel features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    init_uniform, join, Conv3x3Norm, ModelRng, Module, Norm, Pointwise, PointwiseNormRelu,
    RELU_GAIN,
};
use crate::scalar::Scalar;
use crate::srtcm::RtBlock;
use crate::tensor::Tensor;

/// Which rasters feed the encoder and how.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    RgbOnly,
    DemOnly,
    /// RGB and DEM concatenated into one 4-channel stem.
    SingleBranch4ch,
    DualBranch,
}

impl InputMode {
    pub const ALL: [InputMode; 4] = [
        InputMode::RgbOnly,
        InputMode::DemOnly,
        InputMode::SingleBranch4ch,
        InputMode::DualBranch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::RgbOnly => "rgb_only",
            InputMode::DemOnly => "dem_only",
            InputMode::SingleBranch4ch => "single_branch_4ch",
            InputMode::DualBranch => "dual_branch",
        }
    }

    /// Input channels of each branch stem.
    pub fn stem_channels(self) -> Vec<usize> {
        match self {
            InputMode::RgbOnly => vec![3],
            InputMode::DemOnly => vec![1],
            InputMode::SingleBranch4ch => vec![4],
            InputMode::DualBranch => vec![3, 1],
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" | "rgb_only" => Ok(InputMode::RgbOnly),
            "dem" | "dem_only" => Ok(InputMode::DemOnly),
            "single4" | "single_branch_4ch" => Ok(InputMode::SingleBranch4ch),
            "dual" | "dual_branch" => Ok(InputMode::DualBranch),
            other => Err(Error::Parameter(format!("unknown input mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Side of the square network input, in pixels.
    pub input_size: usize,
    pub base_channels: usize,
    pub stages: usize,
    /// Attention heads per stream.
    pub heads: Vec<usize>,
    /// Window size per stream.
    pub windows: Vec<usize>,
    /// Transformer blocks per stream per stage.
    pub blocks: usize,
    pub ffn_ratio: usize,
    pub head_width: usize,
    /// Key width of the region-relation transforms.
    pub key_width: usize,
    pub input_mode: InputMode,
    pub stsro_enabled: bool,
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            base_channels: 16,
            stages: 3,
            heads: vec![2, 4, 8],
            windows: vec![8, 4, 2],
            blocks: 1,
            ffn_ratio: 2,
            head_width: 64,
            key_width: 32,
            input_mode: InputMode::DualBranch,
            stsro_enabled: true,
            dropout: 0.6,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages == 0 || self.stages > 6 {
            return bad(format!("stages must be in 1..=6, got {}", self.stages));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(16) {
            return bad(format!(
                "input size {} is not a positive multiple of 16",
                self.input_size
            ));
        }
        let coarsest = 4 << (self.stages - 1);
        if !self.input_size.is_multiple_of(coarsest) {
            return bad(format!(
                "input size {} not divisible by {coarsest} for {} stages",
                self.input_size, self.stages
            ));
        }
        if self.heads.len() != self.stages || self.windows.len() != self.stages {
            return bad(format!(
                "need one head count and one window size per stream ({} stages), got {} and {}",
                self.stages,
                self.heads.len(),
                self.windows.len()
            ));
        }
        for s in 0..self.stages {
            let c = self.stream_channels(s);
            if self.heads[s] == 0 || !c.is_multiple_of(self.heads[s]) {
                return bad(format!(
                    "stream {s}: {c} channels not divisible by {} heads",
                    self.heads[s]
                ));
            }
            if self.windows[s] == 0 {
                return bad(format!("stream {s}: window size must be positive"));
            }
        }
        if self.base_channels == 0
            || self.head_width == 0
            || self.key_width == 0
            || self.ffn_ratio == 0
        {
            return bad("channel widths and ratios must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn stream_channels(&self, s: usize) -> usize {
        self.base_channels << s
    }

    pub fn stream_size(&self, s: usize) -> usize {
        (self.input_size / 4) >> s
    }

    /// Expected (C, H, W) of every stream after each stage.
    pub fn stream_schedule(&self) -> Vec<Vec<(usize, usize, usize)>> {
        (0..self.stages)
            .map(|stage| {
                (0..=stage)
                    .map(|s| {
                        (
                            self.stream_channels(s),
                            self.stream_size(s),
                            self.stream_size(s),
                        )
                    })
                    .collect()
            })
            .collect()
    }

    pub fn concat_width(&self) -> usize {
        (0..self.stages).map(|s| self.stream_channels(s)).sum()
    }
}

/// Streams ordered from highest to lowest resolution.
pub type MultiResFeatures<T> = Vec<Tensor<T>>;

fn dims<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::dim(op, format!("expected C×H×W, got {s:?}"))),
    }
}

/// Two stride-2 3×3 convolutions with normalization and ReLU.
#[derive(Clone, Debug)]
pub struct Stem<T: Scalar> {
    pub conv1: Conv3x3Norm<T>,
    pub conv2: Conv3x3Norm<T>,
}

impl<T: Scalar> Stem<T> {
    pub fn new(rng: &mut ModelRng, c_in: usize, c_out: usize) -> Self {
        Self {
            conv1: Conv3x3Norm::new(rng, c_in, c_out, 2, true),
            conv2: Conv3x3Norm::new(rng, c_out, c_out, 2, true),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = dims("stem", x)?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "stem input {h}×{w} not divisible by 4"
            )));
        }
        let expect = self.conv1.weight.shape()[1];
        if c != expect {
            return Err(Error::Config(format!(
                "stem expects {expect} channels, got {c}"
            )));
        }
        self.conv2.forward(&self.conv1.forward(x)?)
    }
}

impl<T: Scalar> Module<T> for Stem<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv1.visit(&join(p, "conv1"), f);
        self.conv2.visit(&join(p, "conv2"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv1.visit_mut(&join(p, "conv1"), f);
        self.conv2.visit_mut(&join(p, "conv2"), f);
    }
}

/// `stem(x)` with the given stem weights.
pub fn stem<T: Scalar>(x: &Tensor<T>, weights: &Stem<T>) -> Result<Tensor<T>> {
    weights.forward(x)
}

/// Appends a stream computed by a stride-2 convolution of the current
/// lowest-resolution stream; existing streams are returned untouched.
pub fn add_branch<T: Scalar>(
    f: &MultiResFeatures<T>,
    conv: &Conv3x3Norm<T>,
    max_streams: usize,
) -> Result<MultiResFeatures<T>> {
    if f.len() >= max_streams {
        return Err(Error::Contract(format!(
            "already at the maximum of {max_streams} streams"
        )));
    }
    let last = f
        .last()
        .ok_or_else(|| Error::Contract("no stream to branch from".into()))?;
    let mut out = f.clone();
    out.push(conv.forward(last)?);
    Ok(out)
}

/// Path from stream `s` into stream `t` of a cross-resolution exchange.
#[derive(Clone, Debug)]
pub enum FusePath<T: Scalar> {
    Identity,
    /// Lower-resolution source: 1×1 projection then bilinear upsampling.
    Up(Pointwise<T>),
    /// Higher-resolution source: chained stride-2 3×3 convolutions.
    Down(Vec<Conv3x3Norm<T>>),
}

impl<T: Scalar> FusePath<T> {
    fn new(rng: &mut ModelRng, cfg: &NetworkConfig, s: usize, t: usize) -> Self {
        let (cs, ct) = (cfg.stream_channels(s), cfg.stream_channels(t));
        if s == t {
            FusePath::Identity
        } else if s > t {
            FusePath::Up(Pointwise::new(rng, cs, ct, 1.0))
        } else {
            let n = t - s;
            FusePath::Down(
                (0..n)
                    .map(|i| {
                        let last = i + 1 == n;
                        Conv3x3Norm::new(rng, cs, if last { ct } else { cs }, 2, !last)
                    })
                    .collect(),
            )
        }
    }

    fn apply(&self, x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
        match self {
            FusePath::Identity => Ok(x.clone()),
            // A 1×1 convolution commutes with corner-aligned bilinear
            // resampling, so projecting first is the cheaper order.
            FusePath::Up(p) => p.forward(x)?.bilinear_resize(target.0, target.1),
            FusePath::Down(convs) => {
                let mut y = x.clone();
                for c in convs {
                    y = c.forward(&y)?;
                }
                Ok(y)
            }
        }
    }
}

impl<T: Scalar> Module<T> for FusePath<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match self {
            FusePath::Identity => {}
            FusePath::Up(m) => m.visit(p, f),
            FusePath::Down(m) => m.visit(p, f),
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            FusePath::Identity => {}
            FusePath::Up(m) => m.visit_mut(p, f),
            FusePath::Down(m) => m.visit_mut(p, f),
        }
    }
}

/// All paths of one cross-resolution exchange; `paths[t][s]` maps stream
/// `s` into stream `t`.
#[derive(Clone, Debug)]
pub struct StreamFusion<T: Scalar> {
    pub paths: Vec<Vec<FusePath<T>>>,
}

impl<T: Scalar> StreamFusion<T> {
    pub fn new(rng: &mut ModelRng, cfg: &NetworkConfig, streams: usize) -> Self {
        let paths = (0..streams)
            .map(|t| {
                (0..streams)
                    .map(|s| FusePath::new(rng, cfg, s, t))
                    .collect()
            })
            .collect();
        Self { paths }
    }
}

impl<T: Scalar> Module<T> for StreamFusion<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (t, row) in self.paths.iter().enumerate() {
            for (s, path) in row.iter().enumerate() {
                path.visit(&join(p, &format!("{s}to{t}")), f);
            }
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (t, row) in self.paths.iter_mut().enumerate() {
            for (s, path) in row.iter_mut().enumerate() {
                path.visit_mut(&join(p, &format!("{s}to{t}")), f);
            }
        }
    }
}

/// Output stream `t` is the sum over sources `s` of the resampled,
/// projected stream `s`.
pub fn fuse_streams<T: Scalar>(
    f: &MultiResFeatures<T>,
    fusion: &StreamFusion<T>,
) -> Result<MultiResFeatures<T>> {
    if f.len() == 1 {
        return Ok(f.clone());
    }
    if fusion.paths.len() != f.len() {
        return Err(Error::Contract(format!(
            "{} streams for a {}-stream fusion",
            f.len(),
            fusion.paths.len()
        )));
    }
    let mut out = Vec::with_capacity(f.len());
    for (t, row) in fusion.paths.iter().enumerate() {
        let (_, h, w) = dims("fuse_streams", &f[t])?;
        let mut acc: Option<Tensor<T>> = None;
        for (s, path) in row.iter().enumerate() {
            let y = path.apply(&f[s], (h, w))?;
            acc = Some(match acc {
                None => y,
                Some(a) => a.add(&y)?,
            });
        }
        out.push(acc.expect("at least one stream"));
    }
    Ok(out)
}

/// Per-stream modality fusion: concat, 1×1 projection, normalization, ReLU.
#[derive(Clone, Debug)]
pub struct CrossFuse<T: Scalar> {
    /// C × 2C, image channels first.
    pub weight: Tensor<T>,
    pub norm: Norm<T>,
}

impl<T: Scalar> CrossFuse<T> {
    pub fn new(rng: &mut ModelRng, channels: usize) -> Self {
        Self {
            weight: init_uniform(rng, &[channels, 2 * channels], 2 * channels, RELU_GAIN),
            norm: Norm::new(channels),
        }
    }

    /// Projection of the concatenated modalities before normalization.
    pub fn project(&self, img: &Tensor<T>, dem: &Tensor<T>) -> Result<Tensor<T>> {
        Tensor::concat(&[img.clone(), dem.clone()])?.conv1x1(&self.weight, None)
    }

    pub fn forward(&self, img: &Tensor<T>, dem: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.norm.forward(&self.project(img, dem)?)?.relu())
    }
}

impl<T: Scalar> Module<T> for CrossFuse<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&join(p, "weight"), &self.weight);
        self.norm.visit(&join(p, "norm"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(p, "weight"), &mut self.weight);
        self.norm.visit_mut(&join(p, "norm"), f);
    }
}

/// Fuses two branches stream by stream. Returns the fused pyramid and the
/// two branches with the fused streams added back.
pub fn cross_modal_fuse<T: Scalar>(
    f_img: &MultiResFeatures<T>,
    f_dem: &MultiResFeatures<T>,
    fusers: &[CrossFuse<T>],
) -> Result<(
    MultiResFeatures<T>,
    MultiResFeatures<T>,
    MultiResFeatures<T>,
)> {
    if f_img.len() != f_dem.len() || f_img.len() > fusers.len() {
        return Err(Error::dim(
            "cross_modal_fuse",
            format!(
                "{} image streams, {} elevation streams, {} fusers",
                f_img.len(),
                f_dem.len(),
                fusers.len()
            ),
        ));
    }
    let mut fused = Vec::with_capacity(f_img.len());
    let mut img_out = Vec::with_capacity(f_img.len());
    let mut dem_out = Vec::with_capacity(f_img.len());
    for (s, ((a, b), fuser)) in f_img.iter().zip(f_dem).zip(fusers).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::dim(
                "cross_modal_fuse",
                format!(
                    "stream {s}: image {:?} vs elevation {:?}",
                    a.shape(),
                    b.shape()
                ),
            ));
        }
        let z = fuser.forward(a, b)?;
        img_out.push(a.add(&z)?);
        dem_out.push(b.add(&z)?);
        fused.push(z);
    }
    Ok((fused, img_out, dem_out))
}

/// Upsample, concatenate, project to the head width, dropout.
#[derive(Clone, Debug)]
pub struct SegHead<T: Scalar> {
    pub project: PointwiseNormRelu<T>,
    pub dropout: f64,
}

impl<T: Scalar> SegHead<T> {
    pub fn new(rng: &mut ModelRng, cfg: &NetworkConfig) -> Self {
        Self {
            project: PointwiseNormRelu::new(rng, cfg.concat_width(), cfg.head_width),
            dropout: cfg.dropout,
        }
    }

    /// Dropout is applied only when a generator is supplied.
    pub fn forward(
        &self,
        f: &MultiResFeatures<T>,
        rng: Option<&mut ModelRng>,
    ) -> Result<Tensor<T>> {
        let first = f
            .first()
            .ok_or_else(|| Error::Contract("empty pyramid".into()))?;
        let (_, h, w) = dims("segmentation_head", first)?;
        let ups = f
            .iter()
            .map(|s| s.bilinear_resize(h, w))
            .collect::<Result<Vec<_>>>()?;
        let y = self.project.forward(&Tensor::concat(&ups)?)?;
        match rng {
            Some(r) if self.dropout > 0.0 => y.dropout(self.dropout, r),
            _ => Ok(y),
        }
    }
}

impl<T: Scalar> Module<T> for SegHead<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.project.visit(p, f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.project.visit_mut(p, f);
    }
}

/// `segmentation_head(f)`.
pub fn segmentation_head<T: Scalar>(
    f: &MultiResFeatures<T>,
    head: &SegHead<T>,
    rng: Option<&mut ModelRng>,
) -> Result<Tensor<T>> {
    head.forward(f, rng)
}

/// One modality branch.
#[derive(Clone, Debug)]
pub struct Branch<T: Scalar> {
    pub stem: Stem<T>,
    /// `new_streams[s-1]` creates stream `s` at the start of stage `s`.
    pub new_streams: Vec<Conv3x3Norm<T>>,
    /// `blocks[stage][stream][i]`.
    pub blocks: Vec<Vec<Vec<RtBlock<T>>>>,
    /// Cross-resolution exchange per stage (stage 0 has a single stream).
    pub fusions: Vec<StreamFusion<T>>,
}

impl<T: Scalar> Branch<T> {
    fn new(rng: &mut ModelRng, cfg: &NetworkConfig, c_in: usize) -> Result<Self> {
        let stem = Stem::new(rng, c_in, cfg.base_channels);
        let new_streams = (1..cfg.stages)
            .map(|s| {
                Conv3x3Norm::new(
                    rng,
                    cfg.stream_channels(s - 1),
                    cfg.stream_channels(s),
                    2,
                    true,
                )
            })
            .collect();
        let mut blocks = Vec::with_capacity(cfg.stages);
        let mut fusions = Vec::with_capacity(cfg.stages);
        for stage in 0..cfg.stages {
            let mut per_stream = Vec::with_capacity(stage + 1);
            for s in 0..=stage {
                per_stream.push(
                    (0..cfg.blocks)
                        .map(|_| {
                            RtBlock::new(
                                rng,
                                cfg.stream_channels(s),
                                cfg.heads[s],
                                cfg.windows[s],
                                cfg.ffn_ratio,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            blocks.push(per_stream);
            fusions.push(StreamFusion::new(rng, cfg, stage + 1));
        }
        Ok(Self {
            stem,
            new_streams,
            blocks,
            fusions,
        })
    }

    fn stage(&self, stage: usize, mut f: MultiResFeatures<T>) -> Result<MultiResFeatures<T>> {
        if stage > 0 {
            f = add_branch(&f, &self.new_streams[stage - 1], self.blocks.len())?;
        }
        for (x, blocks) in f.iter_mut().zip(&self.blocks[stage]) {
            for b in blocks {
                *x = b.forward(x)?;
            }
        }
        fuse_streams(&f, &self.fusions[stage])
    }
}

impl<T: Scalar> Module<T> for Branch<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.stem.visit(&join(p, "stem"), f);
        self.new_streams.visit(&join(p, "new_stream"), f);
        for (stage, streams) in self.blocks.iter().enumerate() {
            streams.visit(&join(p, &format!("stage{stage}.blocks")), f);
        }
        for (stage, fu) in self.fusions.iter().enumerate() {
            fu.visit(&join(p, &format!("stage{stage}.fuse")), f);
        }
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem.visit_mut(&join(p, "stem"), f);
        self.new_streams.visit_mut(&join(p, "new_stream"), f);
        for (stage, streams) in self.blocks.iter_mut().enumerate() {
            streams.visit_mut(&join(p, &format!("stage{stage}.blocks")), f);
        }
        for (stage, fu) in self.fusions.iter_mut().enumerate() {
            fu.visit_mut(&join(p, &format!("stage{stage}.fuse")), f);
        }
    }
}

/// Network inputs at the configured size. Absent rasters are `None`.
#[derive(Clone, Debug)]
pub struct NetInput<T: Scalar> {
    pub rgb: Option<Tensor<T>>,
    pub dem: Option<Tensor<T>>,
}

pub struct EncoderOutput<T: Scalar> {
    /// D × S/4 × S/4.
    pub pixel_features: Tensor<T>,
    /// 2 × S/4 × S/4 background/terrace scores.
    pub soft_regions: Tensor<T>,
    /// (C, H, W) of every stream after each stage.
    pub schedule: Vec<Vec<(usize, usize, usize)>>,
}

/// Encoder, head and soft-region classifier.
#[derive(Clone, Debug)]
pub struct OmegaNet<T: Scalar> {
    pub cfg: NetworkConfig,
    pub branches: Vec<Branch<T>>,
    /// `cross[stage][stream]`, present for two branches.
    pub cross: Vec<Vec<CrossFuse<T>>>,
    pub head: SegHead<T>,
    pub soft: Pointwise<T>,
}

/// Number of region classes (background, terrace).
pub const REGIONS: usize = 2;

impl<T: Scalar> OmegaNet<T> {
    pub fn new(cfg: &NetworkConfig, rng: &mut ModelRng) -> Result<Self> {
        cfg.validate()?;
        let branches = cfg
            .input_mode
            .stem_channels()
            .into_iter()
            .map(|c| Branch::new(rng, cfg, c))
            .collect::<Result<Vec<_>>>()?;
        let cross = if branches.len() == 2 {
            (0..cfg.stages)
                .map(|stage| {
                    (0..=stage)
                        .map(|s| CrossFuse::new(rng, cfg.stream_channels(s)))
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg: cfg.clone(),
            branches,
            cross,
            head: SegHead::new(rng, cfg),
            soft: Pointwise::new(rng, cfg.head_width, REGIONS, 1.0),
        })
    }

    fn stem_inputs(&self, input: &NetInput<T>) -> Result<Vec<Tensor<T>>> {
        let s = self.cfg.input_size;
        let check = |t: &Option<Tensor<T>>, c: usize, what: &str| -> Result<Tensor<T>> {
            let t = t.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "input mode {} requires the {what} raster",
                    self.cfg.input_mode
                ))
            })?;
            if t.shape() != [c, s, s] {
                return Err(Error::Config(format!(
                    "{what} raster {:?}, expected {:?}",
                    t.shape(),
                    [c, s, s]
                )));
            }
            Ok(t.clone())
        };
        Ok(match self.cfg.input_mode {
            InputMode::RgbOnly => vec![check(&input.rgb, 3, "image")?],
            InputMode::DemOnly => vec![check(&input.dem, 1, "elevation")?],
            InputMode::SingleBranch4ch => {
                vec![Tensor::concat(&[
                    check(&input.rgb, 3, "image")?,
                    check(&input.dem, 1, "elevation")?,
                ])?]
            }
            InputMode::DualBranch => vec![
                check(&input.rgb, 3, "image")?,
                check(&input.dem, 1, "elevation")?,
            ],
        })
    }

    /// Runs the encoder; dropout is active only when `rng` is supplied.
    pub fn forward(
        &self,
        input: &NetInput<T>,
        rng: Option<&mut ModelRng>,
    ) -> Result<EncoderOutput<T>> {
        let inputs = self.stem_inputs(input)?;
        let mut feats: Vec<MultiResFeatures<T>> = self
            .branches
            .iter()
            .zip(&inputs)
            .map(|(b, x)| Ok(vec![b.stem.forward(x)?]))
            .collect::<Result<_>>()?;
        let mut schedule = Vec::with_capacity(self.cfg.stages);
        let mut pyramid = Vec::new();
        for stage in 0..self.cfg.stages {
            for (b, f) in self.branches.iter().zip(feats.iter_mut()) {
                *f = b.stage(stage, std::mem::take(f))?;
            }
            if feats.len() == 2 {
                let (fused, img, dem) = cross_modal_fuse(&feats[0], &feats[1], &self.cross[stage])?;
                feats = vec![img, dem];
                pyramid = fused;
            } else {
                pyramid = feats[0].clone();
            }
            schedule.push(
                pyramid
                    .iter()
                    .map(|t| (t.shape()[0], t.shape()[1], t.shape()[2]))
                    .collect(),
            );
        }
        let pixel_features = self.head.forward(&pyramid, rng)?;
        let soft_regions = self.soft.forward(&pixel_features)?;
        Ok(EncoderOutput {
            pixel_features,
            soft_regions,
            schedule,
        })
    }
}

impl<T: Scalar> Module<T> for OmegaNet<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        let names = match self.branches.len() {
            2 => ["image", "elevation"].as_slice(),
            _ => ["branch"].as_slice(),
        };
        for (b, name) in self.branches.iter().zip(names) {
            b.visit(&join(p, name), f);
        }
        for (stage, fusers) in self.cross.iter().enumerate() {
            fusers.visit(&join(p, &format!("cross{stage}")), f);
        }
        self.head.visit(&join(p, "head"), f);
        self.soft.visit(&join(p, "soft"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        let names = match self.branches.len() {
            2 => ["image", "elevation"].as_slice(),
            _ => ["branch"].as_slice(),
        };
        for (b, name) in self.branches.iter_mut().zip(names) {
            b.visit_mut(&join(p, name), f);
        }
        for (stage, fusers) in self.cross.iter_mut().enumerate() {
            fusers.visit_mut(&join(p, &format!("cross{stage}")), f);
        }
        self.head.visit_mut(&join(p, "head"), f);
        self.soft.visit_mut(&join(p, "soft"), f);
    }
}
