//! Tiles on disk: RGB as 8-bit PPM, DEM as 16-bit PGM with a TOML sidecar,
//! labels as 8-bit PGM (0/255), truth polygons as GeoJSON, and a JSON
//! manifest indexing them.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{GraymapHeader, PixmapHeader, PnmEncoder, PnmHeader, SampleEncoding};
use image::{ExtendedColorType, ImageFormat};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetConfig, DualModalTile, Raster, Split};
use crate::error::{Error, Result};
use crate::vem::PolygonSet;

/// Writes via a sibling temporary file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// 16-bit colour types take native-endian sample bytes.
fn pnm_bytes(samples: &[u8], size: u32, color: ExtendedColorType) -> Result<Vec<u8>> {
    let header: PnmHeader = match color {
        ExtendedColorType::Rgb8 => PixmapHeader {
            encoding: SampleEncoding::Binary,
            width: size,
            height: size,
            maxval: 255,
        }
        .into(),
        ExtendedColorType::L16 => GraymapHeader {
            encoding: SampleEncoding::Binary,
            width: size,
            height: size,
            maxwhite: 65535,
        }
        .into(),
        _ => GraymapHeader {
            encoding: SampleEncoding::Binary,
            width: size,
            height: size,
            maxwhite: 255,
        }
        .into(),
    };
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_header(header)
        .encode(samples, size, size, color)
        .map_err(|e| Error::Format(format!("encoding netpbm: {e}")))?;
    Ok(buf)
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path)?;
    image::load(Cursor::new(bytes), ImageFormat::Pnm)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Elevation storage: `metres = offset + scale · count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemMeta {
    pub scale: f64,
    pub offset: f64,
    pub gsd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    /// "train", "val" or "test".
    pub split: String,
    pub gsd_rgb: f64,
    pub gsd_label: f64,
    pub rgb: String,
    pub dem: String,
    pub dem_meta: String,
    pub label: String,
    pub polygons: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub split: Split,
    pub tiles: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn rel(dir: &str, file: &str) -> String {
    format!("{dir}/{file}")
}

/// 8-bit binary PGM of a square mask, 255 for set pixels.
pub fn mask_pgm(mask: &[bool], size: usize) -> Result<Vec<u8>> {
    let samples: Vec<u8> = mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
    pnm_bytes(&samples, size as u32, ExtendedColorType::L8)
}

/// 16-bit binary PGM of square values in [0, 1].
pub fn unit_pgm16(values: &[f64], size: usize) -> Result<Vec<u8>> {
    let samples: Vec<u8> = values
        .iter()
        .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_ne_bytes())
        .collect();
    pnm_bytes(&samples, size as u32, ExtendedColorType::L16)
}

pub fn png_bytes(img: &image::RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("encoding png: {e}")))?;
    Ok(buf.into_inner())
}

/// Reads a grey PGM as a mask (sample ≥ half of full scale), returning
/// (mask, height, width).
pub fn read_mask(path: &Path) -> Result<(Vec<bool>, usize, usize)> {
    let img = decode(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.pixels().map(|p| p.0[0] >= 32768).collect(), h, w))
}

/// Writes one tile's files under `root` and returns its manifest entry with
/// the split left empty.
pub fn write_tile(root: &Path, id: &str, tile: &DualModalTile) -> Result<ManifestEntry> {
    let entry = ManifestEntry {
        id: id.to_string(),
        seed: tile.seed,
        split: String::new(),
        gsd_rgb: tile.gsd_rgb,
        gsd_label: tile.gsd_label,
        rgb: rel(id, "rgb.ppm"),
        dem: rel(id, "dem.pgm"),
        dem_meta: rel(id, "dem.toml"),
        label: rel(id, "label.pgm"),
        polygons: rel(id, "truth.geojson"),
    };
    let n = tile.rgb.size * tile.rgb.size;
    let rgb: Vec<u8> = (0..n)
        .flat_map(|i| [0, 1, 2].map(|c| quantize_unit(tile.rgb.data[c * n + i])))
        .collect();
    write_atomic(
        &root.join(&entry.rgb),
        &pnm_bytes(&rgb, tile.rgb.size as u32, ExtendedColorType::Rgb8)?,
    )?;

    let (lo, hi) = tile
        .dem
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    let meta = DemMeta {
        scale: if hi > lo { (hi - lo) / 65535.0 } else { 1.0 },
        offset: lo,
        gsd: tile.gsd_dem,
    };
    let dem: Vec<u8> = tile
        .dem
        .data
        .iter()
        .flat_map(|v| {
            (((v - meta.offset) / meta.scale).round().clamp(0.0, 65535.0) as u16).to_ne_bytes()
        })
        .collect();
    write_atomic(
        &root.join(&entry.dem),
        &pnm_bytes(&dem, tile.dem.size as u32, ExtendedColorType::L16)?,
    )?;
    let meta_text = toml::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&root.join(&entry.dem_meta), meta_text.as_bytes())?;

    let label: Vec<u8> = tile
        .label
        .data
        .iter()
        .map(|v| if *v >= 0.5 { 255 } else { 0 })
        .collect();
    write_atomic(
        &root.join(&entry.label),
        &pnm_bytes(&label, tile.label.size as u32, ExtendedColorType::L8)?,
    )?;
    write_atomic(
        &root.join(&entry.polygons),
        tile.truth_polygons.to_geojson_string().as_bytes(),
    )?;
    Ok(entry)
}

pub fn read_tile(root: &Path, e: &ManifestEntry) -> Result<DualModalTile> {
    let rgb = decode(&root.join(&e.rgb))?.to_rgb8();
    let s = rgb.width() as usize;
    if rgb.height() as usize != s {
        return Err(Error::Format(format!("{}: tiles must be square", e.rgb)));
    }
    let mut rgb_data = vec![0.0; 3 * s * s];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            rgb_data[(c * s + y as usize) * s + x as usize] = p.0[c] as f64 / 255.0;
        }
    }
    let meta_text = fs::read_to_string(root.join(&e.dem_meta))?;
    let meta: DemMeta = toml::from_str(&meta_text)
        .map_err(|err| Error::Format(format!("{}: {err}", e.dem_meta)))?;
    let dem = decode(&root.join(&e.dem))?.to_luma16();
    let d = dem.width() as usize;
    let dem_data = dem
        .pixels()
        .map(|p| meta.offset + meta.scale * p.0[0] as f64)
        .collect();
    let label = decode(&root.join(&e.label))?.to_luma8();
    let l = label.width() as usize;
    let label_data = label
        .pixels()
        .map(|p| f64::from(u8::from(p.0[0] >= 128)))
        .collect();
    let geo: serde_json::Value = serde_json::from_slice(&fs::read(root.join(&e.polygons))?)
        .map_err(|err| Error::Format(format!("{}: {err}", e.polygons)))?;
    Ok(DualModalTile {
        rgb: Raster::new(3, s, rgb_data)?,
        dem: Raster::new(1, d, dem_data)?,
        label: Raster::new(1, l, label_data)?,
        gsd_rgb: e.gsd_rgb,
        gsd_dem: meta.gsd,
        gsd_label: e.gsd_label,
        truth_polygons: PolygonSet::from_geojson(&geo)?,
        seed: e.seed,
    })
}

fn split_name(split: &Split, i: usize) -> &'static str {
    if split.val.contains(&i) {
        "val"
    } else if split.test.contains(&i) {
        "test"
    } else {
        "train"
    }
}

/// Writes every tile plus `manifest.json`; returns the manifest path.
pub fn write_dataset(root: &Path, cfg: &DatasetConfig, data: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let mut tiles = Vec::with_capacity(data.tiles.len());
    for (i, t) in data.tiles.iter().enumerate() {
        let mut e = write_tile(root, &format!("tile_{i:04}"), t)?;
        e.split = split_name(&data.split, i).to_string();
        tiles.push(e);
    }
    let manifest = Manifest {
        config: cfg.clone(),
        split: data.split.clone(),
        tiles,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let bytes = fs::read(root.join(MANIFEST_FILE))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{MANIFEST_FILE}: {e}")))
}

/// Loads a dataset written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<(Manifest, Dataset)> {
    let m = read_manifest(root)?;
    let tiles = m
        .tiles
        .iter()
        .map(|e| read_tile(root, e))
        .collect::<Result<Vec<_>>>()?;
    if m.split.train.len() + m.split.val.len() + m.split.test.len() != tiles.len() {
        return Err(Error::Format(
            "manifest split does not cover every tile".into(),
        ));
    }
    let split = m.split.clone();
    Ok((m, Dataset { tiles, split }))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_dataset, prepare_cross_scale, synth_tile, Grouping, SynthConfig};
    use super::*;

    #[test]
    fn tile_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let t = synth_tile(&SynthConfig {
            seed: 21,
            ..SynthConfig::default()
        })
        .unwrap();
        let t = prepare_cross_scale(&t, Grouping::A).unwrap();
        let e = write_tile(dir.path(), "t", &t).unwrap();
        let back = read_tile(dir.path(), &e).unwrap();
        assert_eq!(back.label, t.label);
        assert_eq!(back.truth_polygons, t.truth_polygons);
        assert_eq!(back.dem.size, 10);
        assert!(back
            .rgb
            .data
            .iter()
            .zip(&t.rgb.data)
            .all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        let range = t.dem.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - t.dem.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = range / 65535.0;
        assert!(back
            .dem
            .data
            .iter()
            .zip(&t.dem.data)
            .all(|(a, b)| (a - b).abs() <= tol));
        assert_eq!(back.gsd_dem, t.gsd_dem);
    }

    #[test]
    fn dataset_roundtrip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            tiles: 10,
            seed: 4,
            ..DatasetConfig::default()
        };
        let data = generate_dataset(&cfg).unwrap();
        write_dataset(dir.path(), &cfg, &data).unwrap();
        let (m, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m.tiles.len(), 10);
        assert_eq!(back.split, data.split);
        assert_eq!(m.tiles.iter().filter(|e| e.split == "train").count(), 8);
        let first = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let again = tempfile::tempdir().unwrap();
        write_dataset(again.path(), &cfg, &generate_dataset(&cfg).unwrap()).unwrap();
        assert_eq!(fs::read(again.path().join(MANIFEST_FILE)).unwrap(), first);
    }
}
