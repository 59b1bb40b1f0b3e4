//! Polygon output: simplification, validity, GeoJSON and overlay images.
//!
//! Rings here are lists of [x, y] positions; for pixel space that is
//! [col, row].

use image::{Rgb, RgbImage};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Shoelace signed area of an open or closed ring.
pub fn signed_area(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn dp_open(points: &[[f64; 2]], tol: f64, keep: &mut [bool]) {
    let n = points.len();
    if n < 3 {
        return;
    }
    let (a, b) = (points[0], points[n - 1]);
    let (mut worst, mut at) = (0.0, 0);
    for (i, p) in points.iter().enumerate().take(n - 1).skip(1) {
        let d = point_segment_distance(*p, a, b);
        if d > worst {
            worst = d;
            at = i;
        }
    }
    if worst > tol {
        keep[at] = true;
        dp_open(&points[..=at], tol, &mut keep[..=at]);
        dp_open(&points[at..], tol, &mut keep[at..]);
    }
}

/// Douglas–Peucker on an open representation of a closed ring. The ring is
/// split at vertex 0 and the vertex farthest from it; both chains are
/// simplified independently. `tol <= 0` returns the ring unchanged.
pub fn douglas_peucker_closed(ring: &[[f64; 2]], tol: f64) -> Vec<[f64; 2]> {
    let n = ring.len();
    if tol <= 0.0 || n < 4 {
        return ring.to_vec();
    }
    let far = (1..n)
        .max_by(|&i, &j| {
            let d =
                |k: usize| (ring[k][0] - ring[0][0]).powi(2) + (ring[k][1] - ring[0][1]).powi(2);
            d(i).partial_cmp(&d(j))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(j.cmp(&i))
        })
        .expect("ring has vertices");
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    let mut closed = ring.to_vec();
    closed.push(ring[0]);
    dp_open(&closed[..=far], tol, &mut keep[..=far]);
    dp_open(&closed[far..], tol, &mut keep[far..]);
    (0..n).filter(|&i| keep[i]).map(|i| ring[i]).collect()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| {
        p[0] >= a[0].min(b[0])
            && p[0] <= a[0].max(b[0])
            && p[1] >= a[1].min(b[1])
            && p[1] <= a[1].max(b[1])
    };
    (d1 == 0.0 && on(q1, q2, p1))
        || (d2 == 0.0 && on(q1, q2, p2))
        || (d3 == 0.0 && on(p1, p2, q1))
        || (d4 == 0.0 && on(p1, p2, q2))
}

/// Whether any two non-adjacent edges of the open ring touch or cross.
pub fn ring_self_intersects(ring: &[[f64; 2]]) -> bool {
    let n = ring.len();
    if n < 4 {
        return n == 3 && signed_area(ring) == 0.0;
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Affine pixel-to-world transform: `X = a + b·col + c·row`,
/// `Y = d + e·col + f·row`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoTransform(pub [f64; 6]);

impl GeoTransform {
    /// North-up grid with square pixels of `gsd` metres and its top-left
    /// pixel centre at (x0, y0).
    pub fn north_up(x0: f64, y0: f64, gsd: f64) -> Self {
        GeoTransform([x0, gsd, 0.0, y0, 0.0, -gsd])
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let t = &self.0;
        [
            t[0] + t[1] * p[0] + t[2] * p[1],
            t[3] + t[4] * p[0] + t[5] * p[1],
        ]
    }
}

/// Closed ring (first position repeated last), counter-clockwise in its
/// output frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    pub ring: Vec<[f64; 2]>,
    /// False when the simplified ring self-intersects.
    pub valid: bool,
}

impl Polygon {
    /// Positions without the closing repeat.
    pub fn open_ring(&self) -> &[[f64; 2]] {
        &self.ring[..self.ring.len().saturating_sub(1)]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolygonSet {
    pub polygons: Vec<Polygon>,
}

impl PolygonSet {
    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .polygons
            .iter()
            .enumerate()
            .map(|(i, p)| {
                json!({
                    "type": "Feature",
                    "properties": { "id": i, "valid": p.valid, "vertices": p.ring.len() - 1 },
                    "geometry": { "type": "Polygon", "coordinates": [p.ring] },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn to_geojson_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_geojson()).expect("polygon JSON serializes")
    }

    /// Parses a FeatureCollection of simple polygons.
    pub fn from_geojson(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("GeoJSON: {m}"));
        if v.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(bad("not a FeatureCollection"));
        }
        let feats = v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing features"))?;
        let mut polygons = Vec::with_capacity(feats.len());
        for f in feats {
            let geom = f
                .get("geometry")
                .ok_or_else(|| bad("feature without geometry"))?;
            if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
                return Err(bad("geometry is not a Polygon"));
            }
            let rings = geom
                .get("coordinates")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("missing coordinates"))?;
            let outer = rings
                .first()
                .and_then(Value::as_array)
                .ok_or_else(|| bad("polygon without a ring"))?;
            let ring = outer
                .iter()
                .map(|p| {
                    match p
                        .as_array()
                        .map(|a| a.iter().map(Value::as_f64).collect::<Vec<_>>())
                    {
                        Some(c) if c.len() == 2 && c.iter().all(Option::is_some) => {
                            Ok([c[0].unwrap(), c[1].unwrap()])
                        }
                        _ => Err(bad("position is not a pair of numbers")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let valid = f
                .pointer("/properties/valid")
                .and_then(Value::as_bool)
                .unwrap_or(true);
            polygons.push(Polygon { ring, valid });
        }
        Ok(Self { polygons })
    }
}

/// Converts (row, col) contours to closed, counter-clockwise rings, with
/// optional simplification (`simplify_tol` in pixels, 0 = off) and an
/// optional geo-transform. Orientation is fixed after transforming.
pub fn emit_polygons(
    contours: &[Vec<[f64; 2]>],
    simplify_tol: f64,
    transform: Option<GeoTransform>,
) -> PolygonSet {
    let polygons = contours
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let xy: Vec<[f64; 2]> = c.iter().map(|p| [p[1], p[0]]).collect();
            let simple = douglas_peucker_closed(&xy, simplify_tol);
            let valid = simple.len() >= 3 && !ring_self_intersects(&simple);
            let mut ring: Vec<[f64; 2]> = match transform {
                Some(t) => simple.iter().map(|p| t.apply(*p)).collect(),
                None => simple,
            };
            if signed_area(&ring) < 0.0 {
                ring[1..].reverse();
            }
            ring.push(ring[0]);
            Polygon { ring, valid }
        })
        .collect();
    PolygonSet { polygons }
}

/// Mask in grey with contour outlines in red, upscaled by `scale`.
pub fn render_overlay(
    mask: &[bool],
    h: usize,
    w: usize,
    contours: &[Vec<[f64; 2]>],
    scale: u32,
) -> RgbImage {
    let scale = scale.max(1);
    let mut img = RgbImage::from_fn(w as u32 * scale, h as u32 * scale, |x, y| {
        let (r, c) = ((y / scale) as usize, (x / scale) as usize);
        if mask[r * w + c] {
            Rgb([150, 150, 150])
        } else {
            Rgb([20, 20, 20])
        }
    });
    let s = scale as f64;
    let to_px = |p: [f64; 2]| ((p[1] + 0.5) * s, (p[0] + 0.5) * s);
    for c in contours {
        for i in 0..c.len() {
            let (x0, y0) = to_px(c[i]);
            let (x1, y1) = to_px(c[(i + 1) % c.len()]);
            let n = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for k in 0..=n {
                let t = k as f64 / n as f64;
                let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
                if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
                    img.put_pixel(x as u32, y as u32, Rgb([230, 40, 40]));
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_ring_closed_counter_clockwise() {
        // Clockwise in (x=col, y=row) input order gets reversed.
        let c = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        let set = emit_polygons(&[c], 0.0, None);
        let p = &set.polygons[0];
        assert_eq!(p.ring.len(), 5);
        assert_eq!(p.ring.first(), p.ring.last());
        assert!(signed_area(p.open_ring()) > 0.0);
        assert!(p.valid);
    }

    #[test]
    fn collinear_vertices_removed() {
        let ring = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [2.0, 2.0],
            [1.0, 2.0],
            [0.0, 2.0],
            [0.0, 1.0],
        ];
        let s = douglas_peucker_closed(&ring, 0.5);
        assert_eq!(s, vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]);
        assert_eq!(douglas_peucker_closed(&ring, 0.0), ring);
    }

    #[test]
    fn bowtie_flagged_invalid() {
        let bow = vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        assert!(ring_self_intersects(&bow));
        let set = emit_polygons(&[bow.iter().map(|p| [p[1], p[0]]).collect()], 0.0, None);
        assert!(!set.polygons[0].valid);
    }

    #[test]
    fn empty_collection_is_valid_geojson() {
        let v = PolygonSet::default().to_geojson();
        assert_eq!(v["type"], "FeatureCollection");
        assert_eq!(v["features"].as_array().unwrap().len(), 0);
        assert!(PolygonSet::from_geojson(&v).unwrap().is_empty());
    }

    #[test]
    fn transform_keeps_counter_clockwise() {
        let c = vec![[0.0, 0.0], [0.0, 3.0], [3.0, 3.0], [3.0, 0.0]];
        let set = emit_polygons(&[c], 0.0, Some(GeoTransform::north_up(100.0, 200.0, 2.0)));
        let p = &set.polygons[0];
        assert!(signed_area(p.open_ring()) > 0.0);
        assert!(p.ring.iter().all(|q| q[0] >= 100.0 && q[1] <= 200.0));
        let back = PolygonSet::from_geojson(&set.to_geojson()).unwrap();
        assert_eq!(back, set);
    }
}
