//! Mask analysis: connected components, boundary tracing, arc-length
//! resampling, signed distance and polygon rasterization.
//!
//! Pixel (r, c) has its centre at continuous coordinate (r, c). Vertices are
//! (row, col) pairs.

use std::collections::VecDeque;

use super::polygon::signed_area;
use super::Contour;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Components smaller than this many pixels get no contour.
pub const A_MIN: usize = 16;

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

fn check_mask(mask: &[bool], h: usize, w: usize) -> Result<()> {
    if mask.len() != h * w || h == 0 || w == 0 {
        Err(Error::dim(
            "mask",
            format!("{} values for a {h}×{w} raster", mask.len()),
        ))
    } else {
        Ok(())
    }
}

/// 8-connected foreground components in raster order of their first pixel;
/// each component lists its flat pixel indices in discovery order.
pub fn components(mask: &[bool], h: usize, w: usize) -> Result<Vec<Vec<usize>>> {
    check_mask(mask, h, w)?;
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for (dr, dc) in NEIGHBOURS {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let q = rr as usize * w + cc as usize;
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    comp.push(q);
                    queue.push_back(q);
                }
            }
        }
        out.push(comp);
    }
    Ok(out)
}

/// Moore-neighbour trace of the outer boundary of one component, as pixel
/// centres starting at its top-left pixel. The walk runs with increasing
/// signed area in (x = col, y = row).
pub fn trace_boundary(pixels: &[usize], h: usize, w: usize) -> Vec<[f64; 2]> {
    let mut member = vec![false; h * w];
    for &p in pixels {
        member[p] = true;
    }
    let Some(&start) = pixels.iter().min() else {
        return Vec::new();
    };
    let inside = |r: isize, c: isize| {
        r >= 0 && c >= 0 && r < h as isize && c < w as isize && member[r as usize * w + c as usize]
    };
    let pos = |p: usize| ((p / w) as isize, (p % w) as isize);
    let at = |p: usize| [(p / w) as f64, (p % w) as f64];

    // The start pixel is the first in raster order, so its west neighbour is
    // background; scanning begins just after the backtrack direction.
    let (mut cur, mut back) = (start, 6usize);
    let first_state = (start, back);
    let mut path = vec![at(start)];
    loop {
        let (r, c) = pos(cur);
        let mut moved = false;
        for i in 1..=8 {
            let d = (back + i) % 8;
            let (dr, dc) = NEIGHBOURS[d];
            if inside(r + dr, c + dc) {
                let next = ((r + dr) as usize) * w + (c + dc) as usize;
                // New backtrack: the previously examined (background) cell,
                // expressed relative to the new pixel.
                let (pr, pc) = NEIGHBOURS[(d + 7) % 8];
                let (br, bc) = (r + pr - (r + dr), c + pc - (c + dc));
                back = NEIGHBOURS
                    .iter()
                    .position(|&n| n == (br, bc))
                    .expect("adjacent cell");
                cur = next;
                moved = true;
                break;
            }
        }
        if !moved || (cur, back) == first_state {
            break;
        }
        path.push(at(cur));
        if path.len() > 4 * h * w {
            break;
        }
    }
    // The walk re-enters the start pixel last; drop the duplicate.
    if path.len() > 1 && path.last() == path.first() {
        path.pop();
    }
    path
}

/// `x` points equally spaced by arc length along the closed polyline
/// `points`, starting at `points[0]`.
pub fn resample_closed(points: &[[f64; 2]], x: usize) -> Vec<[f64; 2]> {
    if points.is_empty() || x == 0 {
        return Vec::new();
    }
    let n = points.len();
    let seg: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .collect();
    let total: f64 = seg.iter().sum();
    if total == 0.0 {
        return vec![points[0]; x];
    }
    let step = total / x as f64;
    let mut out = Vec::with_capacity(x);
    let (mut i, mut walked) = (0usize, 0.0);
    for j in 0..x {
        let target = j as f64 * step;
        while i < n - 1 && walked + seg[i] < target {
            walked += seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 {
            ((target - walked) / seg[i]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (points[i], points[(i + 1) % n]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Moves every vertex of a closed (row, col) ring with positive signed area
/// in (x = col, y = row) outward by `d`, using mitred vertex normals capped
/// at twice the offset.
pub fn outset_ring(ring: &[[f64; 2]], d: f64) -> Vec<[f64; 2]> {
    let n = ring.len();
    if n < 3 || d == 0.0 {
        return ring.to_vec();
    }
    let normal = |a: [f64; 2], b: [f64; 2]| {
        let (dr, dc) = (b[0] - a[0], b[1] - a[1]);
        let len = (dr * dr + dc * dc).sqrt();
        if len == 0.0 {
            [0.0, 0.0]
        } else {
            [-dc / len, dr / len]
        }
    };
    (0..n)
        .map(|i| {
            let n1 = normal(ring[(i + n - 1) % n], ring[i]);
            let n2 = normal(ring[i], ring[(i + 1) % n]);
            let denom = 1.0 + n1[0] * n2[0] + n1[1] * n2[1];
            let mut m = if denom > 1e-9 {
                [(n1[0] + n2[0]) / denom, (n1[1] + n2[1]) / denom]
            } else {
                n2
            };
            let len = (m[0] * m[0] + m[1] * m[1]).sqrt();
            if len > 2.0 {
                m = [m[0] * 2.0 / len, m[1] * 2.0 / len];
            }
            [ring[i][0] + d * m[0], ring[i][1] + d * m[1]]
        })
        .collect()
}

/// Components that were too small for a contour.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InitReport {
    /// (component index, pixel count) of skipped components.
    pub skipped: Vec<(usize, usize)>,
}

/// One resting contour of `x` vertices per component of at least `min_area`
/// pixels, oriented with positive signed area in (x = col, y = row).
pub fn init_contour_with<T: Scalar>(
    mask: &[bool],
    h: usize,
    w: usize,
    x: usize,
    min_area: usize,
) -> Result<(Vec<Contour<T>>, InitReport)> {
    if x < 4 {
        return Err(Error::Parameter(format!(
            "a contour needs at least 4 vertices, got {x}"
        )));
    }
    let mut report = InitReport::default();
    let mut out = Vec::new();
    for (i, comp) in components(mask, h, w)?.iter().enumerate() {
        if comp.len() < min_area {
            report.skipped.push((i, comp.len()));
            continue;
        }
        let mut ring = resample_closed(&trace_boundary(comp, h, w), x);
        let xy: Vec<[f64; 2]> = ring.iter().map(|p| [p[1], p[0]]).collect();
        if signed_area(&xy) < 0.0 {
            ring[1..].reverse();
        }
        out.push(Contour::new(&ring)?);
    }
    Ok((out, report))
}

/// [`init_contour_with`] with the default minimum area.
pub fn init_contour<T: Scalar>(
    mask: &[bool],
    h: usize,
    w: usize,
    x: usize,
) -> Result<(Vec<Contour<T>>, InitReport)> {
    init_contour_with(mask, h, w, x, A_MIN)
}

/// Exact 1-D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest `true` pixel.
fn edt(targets: &[bool], h: usize, w: usize) -> Vec<f64> {
    let big = ((h + w) * (h + w)) as f64 * 4.0;
    let mut g: Vec<f64> = targets.iter().map(|&t| if t { 0.0 } else { big }).collect();
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col[r] = g[r * w + c];
        }
        edt_1d(&col, &mut tmp);
        for r in 0..h {
            g[r * w + c] = tmp[r];
        }
    }
    let mut row = vec![0.0; w];
    for r in 0..h {
        edt_1d(&g[r * w..(r + 1) * w], &mut row);
        g[r * w..(r + 1) * w].copy_from_slice(&row);
    }
    g
}

/// Signed distance to the mask edge: positive outside, negative inside,
/// measured between pixel centres and offset by half a pixel so the sign
/// changes on the pixel boundary.
pub fn signed_distance(mask: &[bool], h: usize, w: usize) -> Result<Vec<f64>> {
    check_mask(mask, h, w)?;
    let to_fg = edt(mask, h, w);
    let inverted: Vec<bool> = mask.iter().map(|m| !m).collect();
    let to_bg = edt(&inverted, h, w);
    Ok(mask
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if m {
                0.5 - to_bg[i].sqrt()
            } else {
                to_fg[i].sqrt() - 0.5
            }
        })
        .collect())
}

/// Pixels whose centre lies inside the closed `ring` of (row, col) vertices
/// (even-odd rule).
pub fn rasterize_polygon(ring: &[[f64; 2]], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    let n = ring.len();
    if n < 3 {
        return out;
    }
    for r in 0..h {
        let y = r as f64;
        let mut xs = Vec::new();
        for i in 0..n {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            if (a[0] <= y) != (b[0] <= y) {
                xs.push(a[1] + (y - a[0]) / (b[0] - a[0]) * (b[1] - a[1]));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        for pair in xs.chunks(2) {
            if let [x0, x1] = pair {
                // Half-open span [x0, x1).
                let lo = x0.ceil().max(0.0);
                let hi = (x1.ceil() - 1.0).min((w - 1) as f64);
                if hi < lo {
                    continue;
                }
                for c in lo as usize..=hi as usize {
                    out[r * w + c] = true;
                }
            }
        }
    }
    out
}
