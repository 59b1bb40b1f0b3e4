//! Synthetic dual-modal terrace tiles, cross-scale resampling, augmentation,
//! dataset splits and segmentation metrics.
//!
//! A tile holds an RGB raster, a DEM and a binary terrace label over the same
//! ground footprint. Terraces are axis-aligned rectangles whose elevation is
//! quantized into level steps and whose imagery carries a stripe texture that
//! follows the steps. Two kinds of distractor break single-modality
//! shortcuts: striped imagery over an unstepped slope, and stepped terrain
//! without the texture. Only their conjunction marks a terrace.

mod io;
mod metrics;

pub use io::{
    mask_pgm, png_bytes, read_dataset, read_manifest, read_mask, read_tile, unit_pgm16,
    write_atomic, write_dataset, write_tile, Manifest, ManifestEntry, MANIFEST_FILE,
};
pub use metrics::{miou_oa, Confusion, PUBLISHED_DUAL_MIOU, PUBLISHED_DUAL_OA};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::omega::NetInput;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vem::{signed_area, Polygon, PolygonSet};

/// Resolution ratio between the coarse and fine groupings (12.5 m / 2 m).
pub const CROSS_SCALE_FACTOR: f64 = 6.25;
/// Elevations are detrended per tile and divided by this many metres before
/// entering the network.
pub const DEM_SCALE: f64 = 5.0;
/// Minimum empty gap, in pixels, between any two planted rectangles. Six
/// pixels always contain a node of the quarter-resolution logit grid, so
/// neighbouring terraces stay separable after upsampling.
const GAP: usize = 6;
const PLACEMENT_ATTEMPTS: usize = 500;
const BASE_ELEVATION: f64 = 100.0;

/// C×S×S raster in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(channels: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * size * size || channels == 0 || size == 0 {
            return Err(Error::dim(
                "raster",
                format!("{} values for {channels}×{size}×{size}", data.len()),
            ));
        }
        Ok(Self {
            channels,
            size,
            data,
        })
    }

    pub fn zeros(channels: usize, size: usize) -> Self {
        Self {
            channels,
            size,
            data: vec![0.0; channels * size * size],
        }
    }

    pub fn at(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.size + r) * self.size + col]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            self.data.iter().map(|v| T::of(*v)).collect(),
            &[self.channels, self.size, self.size],
        )
        .expect("raster shape is consistent")
    }

    /// Label plane as booleans (value ≥ 0.5).
    pub fn mask(&self) -> Vec<bool> {
        self.plane(0).iter().map(|v| *v >= 0.5).collect()
    }

    /// Per-pixel remap within each channel: `out[r][c] = in[src(r, c)]`.
    fn remap(&self, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let n = self.size;
        let mut data = Vec::with_capacity(self.data.len());
        for ch in 0..self.channels {
            for r in 0..n {
                for c in 0..n {
                    let (sr, sc) = src(r, c);
                    data.push(self.at(ch, sr, sc));
                }
            }
        }
        Self {
            channels: self.channels,
            size: n,
            data,
        }
    }
}

/// Box-averaging weights from `n` input cells onto `m` output cells, with the
/// (generally non-integer) factor `n / m`.
fn box_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let f = n as f64 / m as f64;
    (0..m)
        .map(|j| {
            let (lo, hi) = (j as f64 * f, (j + 1) as f64 * f);
            (lo.floor() as usize..(hi.ceil() as usize).min(n))
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / f))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted average onto an `out`×`out` grid covering the same extent.
pub fn box_downsample(x: &Raster, out: usize) -> Result<Raster> {
    if out == 0 || out > x.size {
        return Err(Error::Parameter(format!(
            "cannot box-downsample {} px to {out} px",
            x.size
        )));
    }
    let w = box_weights(x.size, out);
    let mut data = vec![0.0; x.channels * out * out];
    for ch in 0..x.channels {
        for (i, wr) in w.iter().enumerate() {
            for (j, wc) in w.iter().enumerate() {
                let mut acc = 0.0;
                for &(r, a) in wr {
                    for &(c, b) in wc {
                        acc += a * b * x.at(ch, r, c);
                    }
                }
                data[(ch * out + i) * out + j] = acc;
            }
        }
    }
    Raster::new(x.channels, out, data)
}

/// Majority vote of a binary label onto a coarser grid: a cell is terrace
/// when at least half of its area is.
pub fn majority_downsample(label: &Raster, out: usize) -> Result<Raster> {
    let mut avg = box_downsample(label, out)?;
    for v in &mut avg.data {
        *v = if *v >= 0.5 - 1e-12 { 1.0 } else { 0.0 };
    }
    Ok(avg)
}

/// Coarse raster size for the cross-scale factor, rounded down.
pub fn coarse_size(size: usize) -> usize {
    ((size as f64 / CROSS_SCALE_FACTOR).floor() as usize).max(1)
}

/// Residual of a single-channel raster after removing its least-squares
/// plane `a + b·row + c·col`.
pub fn detrend(x: &Raster) -> Vec<f64> {
    let n = x.size;
    let plane = x.plane(0);
    let mid = (n as f64 - 1.0) / 2.0;
    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
    // Centred row and column indices are orthogonal on a full grid.
    let ss = (0..n).map(|i| (i as f64 - mid).powi(2)).sum::<f64>() * n as f64;
    let (mut sr, mut sc) = (0.0, 0.0);
    for r in 0..n {
        for c in 0..n {
            let v = plane[r * n + c];
            sr += (r as f64 - mid) * v;
            sc += (c as f64 - mid) * v;
        }
    }
    let (b, c) = if ss > 0.0 {
        (sr / ss, sc / ss)
    } else {
        (0.0, 0.0)
    };
    (0..n * n)
        .map(|i| plane[i] - mean - b * ((i / n) as f64 - mid) - c * ((i % n) as f64 - mid))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualModalTile {
    /// 3×S×S in [0, 1].
    pub rgb: Raster,
    /// 1×S×S elevation in metres.
    pub dem: Raster,
    /// 1×S×S in {0, 1}.
    pub label: Raster,
    /// Ground sample distances, metres per pixel.
    pub gsd_rgb: f64,
    pub gsd_dem: f64,
    pub gsd_label: f64,
    /// Closed counter-clockwise rings in label pixel coordinates (x = col,
    /// y = row).
    pub truth_polygons: PolygonSet,
    pub seed: u64,
}

impl DualModalTile {
    /// Ground extent of one side, in metres, per modality.
    pub fn footprints(&self) -> [f64; 3] {
        [
            self.gsd_rgb * self.rgb.size as f64,
            self.gsd_dem * self.dem.size as f64,
            self.gsd_label * self.label.size as f64,
        ]
    }

    /// Truth rings as (row, col) vertices without the closing repeat.
    pub fn truth_rings_rc(&self) -> Vec<Vec<[f64; 2]>> {
        self.truth_polygons
            .polygons
            .iter()
            .map(|p| p.open_ring().iter().map(|q| [q[1], q[0]]).collect())
            .collect()
    }

    /// Network input at `input_size`: RGB as is, DEM with its least-squares
    /// plane removed and scaled by [`DEM_SCALE`], each bilinearly resized
    /// when its grid differs.
    pub fn net_input<T: Scalar>(&self, input_size: usize) -> Result<NetInput<T>> {
        let resize = |t: Tensor<T>| -> Result<Tensor<T>> {
            if t.shape()[1] == input_size {
                Ok(t)
            } else {
                t.bilinear_resize(input_size, input_size)
            }
        };
        let dem: Vec<T> = detrend(&self.dem)
            .into_iter()
            .map(|v| T::of(v / DEM_SCALE))
            .collect();
        let dem = Tensor::new(dem, &[1, self.dem.size, self.dem.size])?;
        Ok(NetInput {
            rgb: Some(resize(self.rgb.to_tensor())?),
            dem: Some(resize(dem)?),
        })
    }

    pub fn labels<T: Scalar>(&self) -> Vec<T> {
        self.label.data.iter().map(|v| T::of(*v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Side length S in pixels.
    pub size: usize,
    pub n_terrace_systems: usize,
    /// Riser height between terrace levels, metres.
    pub step_height: f64,
    /// Terrain gradient, metres per metre.
    pub base_slope: f64,
    /// Gaussian noise σ added to RGB values.
    pub rgb_noise: f64,
    /// Gaussian noise σ added to elevations, metres.
    pub dem_noise: f64,
    /// Expected distractor patches per tile for each modality.
    pub distractor_density: f64,
    /// Native ground sample distance, metres per pixel.
    pub gsd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            n_terrace_systems: 3,
            step_height: 1.5,
            base_slope: 0.2,
            rgb_noise: 0.03,
            dem_noise: 0.05,
            distractor_density: 1.0,
            gsd: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            self.step_height,
            self.base_slope,
            self.rgb_noise,
            self.dem_noise,
            self.distractor_density,
        ];
        if reals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "synthesis parameters must be finite and nonnegative: {self:?}"
            )));
        }
        if self.size < 16 || !(self.gsd > 0.0) || !(self.step_height > 0.0) {
            return Err(Error::Config(format!(
                "need size ≥ 16, positive gsd and step height; got {}, {}, {}",
                self.size, self.gsd, self.step_height
            )));
        }
        Ok(())
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Rect {
    r0: usize,
    c0: usize,
    r1: usize,
    c1: usize,
}

impl Rect {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..=self.r1).contains(&r) && (self.c0..=self.c1).contains(&c)
    }

    fn clear_of(&self, o: &Rect) -> bool {
        self.r1 + GAP < o.r0 || o.r1 + GAP < self.r0 || self.c1 + GAP < o.c0 || o.c1 + GAP < self.c0
    }

    /// Pixel-edge outline, counter-clockwise in (x = col, y = row).
    fn ring(&self) -> Vec<[f64; 2]> {
        let (x0, y0) = (self.c0 as f64 - 0.5, self.r0 as f64 - 0.5);
        let (x1, y1) = (self.c1 as f64 + 0.5, self.r1 as f64 + 0.5);
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    }
}

fn place(rng: &mut ChaCha8Rng, size: usize, placed: &[Rect]) -> Option<Rect> {
    let lo = (size * 3 / 20).max(4);
    let hi = (size * 5 / 16).max(lo);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let (h, w) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
        let (r0, c0) = (rng.gen_range(1..size - h), rng.gen_range(1..size - w));
        let rect = Rect {
            r0,
            c0,
            r1: r0 + h - 1,
            c1: c0 + w - 1,
        };
        if placed.iter().all(|p| rect.clear_of(p)) {
            return Some(rect);
        }
    }
    None
}

fn draw_count(rng: &mut ChaCha8Rng, density: f64) -> usize {
    density.floor() as usize + usize::from(rng.gen::<f64>() < density.fract())
}

/// One synthetic tile at native resolution; identical for identical configs.
pub fn synth_tile(cfg: &SynthConfig) -> Result<DualModalTile> {
    cfg.validate()?;
    let s = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut terraces = Vec::with_capacity(cfg.n_terrace_systems);
    for i in 0..cfg.n_terrace_systems {
        let rect = place(&mut rng, s, &terraces).ok_or_else(|| {
            Error::Config(format!(
                "could not place terrace {} of {} on a {s} px tile",
                i + 1,
                cfg.n_terrace_systems
            ))
        })?;
        terraces.push(rect);
    }
    let mut occupied = terraces.clone();
    let mut texture_only = Vec::new();
    let mut steps_only = Vec::new();
    for _ in 0..draw_count(&mut rng, cfg.distractor_density) {
        if let Some(r) = place(&mut rng, s, &occupied) {
            occupied.push(r);
            texture_only.push(r);
        }
    }
    for _ in 0..draw_count(&mut rng, cfg.distractor_density) {
        if let Some(r) = place(&mut rng, s, &occupied) {
            occupied.push(r);
            steps_only.push(r);
        }
    }

    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let drop = cfg.base_slope * cfg.gsd;
    let (gx, gy) = (drop * theta.cos(), drop * theta.sin());
    let plane = |r: usize, c: usize| BASE_ELEVATION + gx * c as f64 + gy * r as f64;
    let in_any = |rects: &[Rect], r: usize, c: usize| rects.iter().any(|q| q.contains(r, c));

    // Low-frequency soil tint shared by all background pixels.
    let tint: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.02..0.08),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-0.1..0.1),
            )
        })
        .collect();
    let soil = [0.47, 0.39, 0.29];
    let crop = [0.28, 0.52, 0.24];

    let mut rgb = Raster::zeros(3, s);
    let mut dem = Raster::zeros(1, s);
    let mut label = Raster::zeros(1, s);
    let n = s * s;
    for r in 0..s {
        for c in 0..s {
            let i = r * s + c;
            let z = plane(r, c);
            let terrace = in_any(&terraces, r, c);
            let stepped = terrace || in_any(&steps_only, r, c);
            let textured = terrace || in_any(&texture_only, r, c);
            dem.data[i] = if stepped {
                cfg.step_height * (z / cfg.step_height).floor()
            } else {
                z
            };
            label.data[i] = f64::from(u8::from(terrace));
            let shade: f64 = tint
                .iter()
                .map(|(f, ph, k)| 0.04 * (f * (r as f64 + k * c as f64) * 6.0 + ph).sin())
                .sum();
            for ch in 0..3 {
                rgb.data[ch * n + i] = if textured {
                    let stripe = 0.5 + 0.5 * (std::f64::consts::TAU * z / cfg.step_height).cos();
                    crop[ch] * (0.7 + 0.45 * stripe)
                } else {
                    soil[ch] + shade
                };
            }
        }
    }
    if cfg.dem_noise > 0.0 {
        let nd = Normal::new(0.0, cfg.dem_noise).expect("finite σ");
        dem.data.iter_mut().for_each(|v| *v += nd.sample(&mut rng));
    }
    let nr = (cfg.rgb_noise > 0.0).then(|| Normal::new(0.0, cfg.rgb_noise).expect("finite σ"));
    for v in &mut rgb.data {
        if let Some(nr) = &nr {
            *v += nr.sample(&mut rng);
        }
        *v = v.clamp(0.0, 1.0);
    }

    let polygons = terraces
        .iter()
        .map(|t| Polygon {
            ring: t.ring(),
            valid: true,
        })
        .collect();
    Ok(DualModalTile {
        rgb,
        dem,
        label,
        gsd_rgb: cfg.gsd,
        gsd_dem: cfg.gsd,
        gsd_label: cfg.gsd,
        truth_polygons: PolygonSet { polygons },
        seed: cfg.seed,
    })
}

/// Input pairings: (a) fine imagery with coarse elevation, (b) both fine,
/// (c) both coarse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    A,
    B,
    C,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::A, Grouping::B, Grouping::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::A => "a",
            Grouping::B => "b",
            Grouping::C => "c",
        }
    }

    /// Network input size used for this grouping when tiles are `native`
    /// pixels wide: coarse rasters are enlarged to the next multiple of 16.
    pub fn input_size(self, native: usize) -> usize {
        match self {
            Grouping::A | Grouping::B => native,
            Grouping::C => coarse_size(native).div_ceil(16) * 16,
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Grouping::A),
            "b" => Ok(Grouping::B),
            "c" => Ok(Grouping::C),
            other => Err(Error::Parameter(format!(
                "unknown grouping '{other}' (expected a, b or c)"
            ))),
        }
    }
}

fn scale_polygons(set: &PolygonSet, from: usize, to: usize) -> PolygonSet {
    let k = to as f64 / from as f64;
    let map = |v: f64| (v + 0.5) * k - 0.5;
    PolygonSet {
        polygons: set
            .polygons
            .iter()
            .map(|p| Polygon {
                ring: p.ring.iter().map(|q| [map(q[0]), map(q[1])]).collect(),
                valid: p.valid,
            })
            .collect(),
    }
}

/// Resamples a native-resolution tile for a grouping. Coarse grids are
/// `floor(S / 6.25)` pixels wide and their ground sample distance is the
/// footprint divided by that size.
pub fn prepare_cross_scale(tile: &DualModalTile, grouping: Grouping) -> Result<DualModalTile> {
    let s = tile.rgb.size;
    if tile.dem.size != s || tile.label.size != s {
        return Err(Error::Contract(format!(
            "cross-scale preparation needs a native tile, got rgb {s}, dem {}, label {}",
            tile.dem.size, tile.label.size
        )));
    }
    let footprint = tile.gsd_rgb * s as f64;
    let low = coarse_size(s);
    let mut out = tile.clone();
    match grouping {
        Grouping::B => {}
        Grouping::A => {
            out.dem = box_downsample(&tile.dem, low)?;
            out.gsd_dem = footprint / low as f64;
        }
        Grouping::C => {
            out.rgb = box_downsample(&tile.rgb, low)?;
            out.dem = box_downsample(&tile.dem, low)?;
            out.label = majority_downsample(&tile.label, low)?;
            let g = footprint / low as f64;
            (out.gsd_rgb, out.gsd_dem, out.gsd_label) = (g, g, g);
            out.truth_polygons = scale_polygons(&tile.truth_polygons, s, low);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Largest absolute shear factor.
    pub shear_max: f64,
    pub brightness_min: f64,
    pub brightness_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            shear_max: 0.05,
            brightness_min: 0.8,
            brightness_max: 1.2,
        }
    }
}

/// One joint transformation: `quarter_turns` counter-clockwise rotations,
/// then a horizontal shear about the raster centre, then an RGB gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub quarter_turns: u8,
    pub shear: f64,
    pub brightness: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        quarter_turns: 0,
        shear: 0.0,
        brightness: 1.0,
    };

    pub fn draw(rng: &mut impl Rng, cfg: &AugmentConfig) -> Self {
        let quarter_turns = rng.gen_range(0..4u8);
        let shear = if cfg.shear_max > 0.0 {
            rng.gen_range(-cfg.shear_max..=cfg.shear_max)
        } else {
            0.0
        };
        let brightness = if cfg.brightness_max > cfg.brightness_min {
            rng.gen_range(cfg.brightness_min..=cfg.brightness_max)
        } else {
            cfg.brightness_min
        };
        Self {
            quarter_turns,
            shear,
            brightness,
        }
    }

    /// Maps a continuous (x = col, y = row) position on an `n`-pixel grid.
    pub fn map_point(&self, p: [f64; 2], n: usize) -> [f64; 2] {
        let m = (n - 1) as f64;
        let [mut x, mut y] = p;
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (y, m - x);
        }
        [x + self.shear * (y - m / 2.0), y]
    }

    fn apply_raster(&self, x: &Raster) -> Raster {
        let n = x.size;
        let m = n - 1;
        let mut out = x.clone();
        for _ in 0..self.quarter_turns % 4 {
            // Output (r, c) came from input (c, m − r).
            out = out.remap(|r, c| (c, m - r));
        }
        if self.shear != 0.0 {
            let centre = m as f64 / 2.0;
            let shear = self.shear;
            out = out.remap(|r, c| {
                let src = (c as f64 - shear * (r as f64 - centre)).round();
                (r, src.clamp(0.0, m as f64) as usize)
            });
        }
        out
    }

    pub fn apply(&self, tile: &DualModalTile) -> DualModalTile {
        let mut out = tile.clone();
        out.rgb = self.apply_raster(&tile.rgb);
        out.dem = self.apply_raster(&tile.dem);
        out.label = self.apply_raster(&tile.label);
        if self.brightness != 1.0 {
            out.rgb
                .data
                .iter_mut()
                .for_each(|v| *v = (*v * self.brightness).clamp(0.0, 1.0));
        }
        let n = tile.label.size;
        for p in &mut out.truth_polygons.polygons {
            p.ring.iter_mut().for_each(|q| *q = self.map_point(*q, n));
            if signed_area(p.open_ring()) < 0.0 {
                let len = p.ring.len();
                p.ring[1..len - 1].reverse();
            }
        }
        out
    }
}

/// Draws and applies a random joint augmentation.
pub fn augment(tile: &DualModalTile, rng: &mut impl Rng, cfg: &AugmentConfig) -> DualModalTile {
    Augmentation::draw(rng, cfg).apply(tile)
}

/// Index partition of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, cut by `ratios` (train, val, test). Counts are
/// rounded for train and val; test takes the remainder.
pub fn split(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split ratios {ratios:?} must be nonnegative and sum to 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        val,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub tiles: usize,
    pub seed: u64,
    /// Each tile plants between 1 and this many terraces.
    pub max_terraces: usize,
    pub ratios: [f64; 3],
    /// Template for every tile; its seed and terrace count are overridden.
    pub synth: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tiles: 200,
            seed: 0,
            max_terraces: 3,
            ratios: [0.8, 0.1, 0.1],
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tiles: Vec<DualModalTile>,
    pub split: Split,
}

impl Dataset {
    pub fn subset(&self, idx: &[usize]) -> Vec<&DualModalTile> {
        idx.iter().map(|&i| &self.tiles[i]).collect()
    }
}

/// Per-tile synthesis parameters of a dataset, in tile order.
pub fn tile_configs(cfg: &DatasetConfig) -> Vec<SynthConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.tiles)
        .map(|_| SynthConfig {
            seed: rng.gen(),
            n_terrace_systems: rng.gen_range(1..=cfg.max_terraces.max(1)),
            ..cfg.synth.clone()
        })
        .collect()
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.tiles == 0 {
        return Err(Error::Config("dataset needs at least one tile".into()));
    }
    let tiles = tile_configs(cfg)
        .iter()
        .map(synth_tile)
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        tiles,
        split: split(cfg.tiles, cfg.ratios, cfg.seed ^ 0x5eed)?,
    })
}
