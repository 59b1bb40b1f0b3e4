//! Contour-vibration vectorization.
//!
//! A closed contour of `x` vertices evolves under a damped, discretized wave
//! equation whose stiffness β and damping μ are sampled from 2-D fields at
//! the current vertex positions:
//!
//! ```text
//! k[t+1] = 2 k[t] − k[t−1] + (B k[t]) Δt² − μ ⊙ (k[t] − k[t−1]) Δt
//! (B k)_o = β_{o+1} k_{o+1} − 2 β_o k_o + β_{o−1} k_{o−1}      (indices mod x)
//! ```
//!
//! Positions enter `B` relative to the contour's origin (its initial
//! centroid). With spatially varying β the term is not translation
//! invariant in absolute pixel coordinates; anchoring it to the contour
//! makes the dynamics independent of where the image origin lies.

mod polygon;
mod trace;

pub use polygon::{
    douglas_peucker_closed, emit_polygons, render_overlay, ring_self_intersects, signed_area,
    GeoTransform, Polygon, PolygonSet,
};
pub use trace::{
    components, init_contour, init_contour_with, outset_ring, rasterize_polygon, resample_closed,
    signed_distance, trace_boundary, InitReport, A_MIN,
};

use crate::error::{Error, Result};
use crate::nn::{join, ModelRng, Module, Pointwise};
use crate::scalar::Scalar;
use crate::tensor::{GradArgs, Tensor};

/// Default vertex count.
pub const VERTICES: usize = 64;
/// Default time step.
pub const DT: f64 = 0.1;
pub const BETA_MAX: f64 = 1.0;
pub const MU_MAX: f64 = 2.0;
/// Default evolution length.
pub const STEPS: usize = 100;
/// Early stop once every vertex moves less than this for `PATIENCE` steps.
pub const STILL_TOLERANCE: f64 = 1e-3;
pub const PATIENCE: usize = 5;
/// Initial contours are pushed this far outward from the traced pixel
/// centres, which puts them on the pixel edges of the mask.
pub const INIT_OUTSET: f64 = 0.5;
/// Ramp width, in pixels, of the hand-built field used by [`mask_contours`].
pub const ATTRACT_WIDTH: f64 = 3.0;

/// Closed contour with the two most recent states, each x×2 as (row, col).
#[derive(Clone, Debug)]
pub struct Contour<T: Scalar> {
    pub k: Tensor<T>,
    pub k_prev: Tensor<T>,
    /// Reference point for the stiffness term, (row, col).
    pub origin: [f64; 2],
}

impl<T: Scalar> Contour<T> {
    /// Contour at rest at `vertices`, anchored at their centroid.
    pub fn new(vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.len() < 4 {
            return Err(Error::Parameter(format!(
                "a contour needs at least 4 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite contour vertex".into()));
        }
        let n = vertices.len() as f64;
        let origin = [
            vertices.iter().map(|v| v[0]).sum::<f64>() / n,
            vertices.iter().map(|v| v[1]).sum::<f64>() / n,
        ];
        let k = Tensor::new(
            vertices.iter().flatten().map(|&v| T::of(v)).collect(),
            &[vertices.len(), 2],
        )?;
        Ok(Self {
            k_prev: k.clone(),
            k,
            origin,
        })
    }

    /// Contour whose previous state is `vertices − velocity`.
    pub fn with_velocity(vertices: &[[f64; 2]], velocity: &[[f64; 2]]) -> Result<Self> {
        let mut c = Self::new(vertices)?;
        if velocity.len() != vertices.len() {
            return Err(Error::dim(
                "contour",
                format!(
                    "{} velocities for {} vertices",
                    velocity.len(),
                    vertices.len()
                ),
            ));
        }
        let prev = vertices
            .iter()
            .zip(velocity)
            .flat_map(|(p, v)| [T::of(p[0] - v[0]), T::of(p[1] - v[1])])
            .collect();
        c.k_prev = Tensor::new(prev, &[vertices.len(), 2])?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.k.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertices(&self) -> Vec<[f64; 2]> {
        self.k
            .data()
            .chunks(2)
            .map(|c| [c[0].as_f64(), c[1].as_f64()])
            .collect()
    }

    /// Detaches both states from any recorded graph.
    pub fn detach(&self) -> Self {
        Self {
            k: self.k.detach(),
            k_prev: self.k_prev.detach(),
            origin: self.origin,
        }
    }
}

/// Stiffness and damping fields with the time step.
#[derive(Clone, Debug)]
pub struct VibrationField<T: Scalar> {
    /// H×W in [0, β_max].
    pub beta: Tensor<T>,
    /// H×W in [0, μ_max].
    pub mu: Tensor<T>,
    pub dt: f64,
    pub beta_max: f64,
    pub mu_max: f64,
    /// Multiplier from contour coordinates to field grid coordinates.
    pub coord_scale: f64,
}

impl<T: Scalar> VibrationField<T> {
    pub fn new(
        beta: Tensor<T>,
        mu: Tensor<T>,
        dt: f64,
        beta_max: f64,
        mu_max: f64,
    ) -> Result<Self> {
        if beta.ndim() != 2 || beta.shape() != mu.shape() {
            return Err(Error::dim(
                "vibration_field",
                format!("β {:?} vs μ {:?}", beta.shape(), mu.shape()),
            ));
        }
        if !(dt > 0.0) || !(beta_max >= 0.0) || !(mu_max >= 0.0) {
            return Err(Error::Parameter(format!(
                "invalid step {dt} or bounds β≤{beta_max}, μ≤{mu_max}"
            )));
        }
        if beta_max * dt * dt > 1.0 {
            return Err(Error::Parameter(format!(
                "β_max·Δt² = {} exceeds 1",
                beta_max * dt * dt
            )));
        }
        let within = |t: &Tensor<T>, hi: f64| {
            t.data()
                .iter()
                .all(|v| (0.0..=hi + 1e-12).contains(&v.as_f64()))
        };
        if !within(&beta, beta_max) || !within(&mu, mu_max) {
            return Err(Error::Parameter("field values outside their bounds".into()));
        }
        Ok(Self {
            beta,
            mu,
            dt,
            beta_max,
            mu_max,
            coord_scale: 1.0,
        })
    }

    pub fn constant(h: usize, w: usize, beta: f64, mu: f64, dt: f64) -> Result<Self> {
        Self::new(
            Tensor::full(&[h, w], T::of(beta)),
            Tensor::full(&[h, w], T::of(mu)),
            dt,
            beta.max(0.0),
            mu.max(0.0),
        )
    }

    /// Field attracting contours onto the boundary of `mask`: stiffness
    /// grows with signed distance outside the mask (ramp width `width`) and
    /// damping is strong inside.
    pub fn attracting(mask: &[bool], h: usize, w: usize, width: f64, dt: f64) -> Result<Self> {
        let sd = signed_distance(mask, h, w)?;
        let beta = sd
            .iter()
            .map(|d| T::of(BETA_MAX * (d / width).clamp(0.0, 1.0)))
            .collect();
        let mu = sd
            .iter()
            .map(|d| T::of(MU_MAX * (1.0 - d / width).clamp(0.05, 1.0)))
            .collect();
        Self::new(
            Tensor::new(beta, &[h, w])?,
            Tensor::new(mu, &[h, w])?,
            dt,
            BETA_MAX,
            MU_MAX,
        )
    }

    pub fn with_coord_scale(mut self, s: f64) -> Self {
        self.coord_scale = s;
        self
    }
}

/// Bilinear samples of an H×W `field` at x×2 `points` (row, col), with
/// coordinates clamped to the grid. Differentiable in both arguments.
pub fn bilinear_sample<T: Scalar>(field: &Tensor<T>, points: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = match field.shape() {
        [h, w] => (*h, *w),
        s => {
            return Err(Error::dim(
                "sample_field",
                format!("expected H×W field, got {s:?}"),
            ))
        }
    };
    let n = match points.shape() {
        [n, 2] => *n,
        s => {
            return Err(Error::dim(
                "sample_field",
                format!("expected x×2 points, got {s:?}"),
            ))
        }
    };
    struct Cell {
        idx: [usize; 4],
        fr: f64,
        fc: f64,
        dr: bool,
        dc: bool,
    }
    let locate = |v: f64, len: usize| -> (usize, usize, f64, bool) {
        let hi = (len - 1) as f64;
        let inside = v > 0.0 && v < hi;
        let c = v.clamp(0.0, hi);
        let lo = (c.floor() as usize).min(len - 1);
        let up = (lo + 1).min(len - 1);
        (lo, up, c - lo as f64, inside)
    };
    let cells: Vec<Cell> = points
        .data()
        .chunks(2)
        .map(|p| {
            let (r0, r1, fr, dr) = locate(p[0].as_f64(), h);
            let (c0, c1, fc, dc) = locate(p[1].as_f64(), w);
            Cell {
                idx: [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1],
                fr,
                fc,
                dr,
                dc,
            }
        })
        .collect();
    let f = field.data();
    let value = |c: &Cell| {
        let v = [
            f[c.idx[0]].as_f64(),
            f[c.idx[1]].as_f64(),
            f[c.idx[2]].as_f64(),
            f[c.idx[3]].as_f64(),
        ];
        (1.0 - c.fr) * ((1.0 - c.fc) * v[0] + c.fc * v[1])
            + c.fr * ((1.0 - c.fc) * v[2] + c.fc * v[3])
    };
    let data = cells.iter().map(|c| T::of(value(c))).collect();
    Ok(Tensor::from_op(
        data,
        vec![n],
        vec![field.clone(), points.clone()],
        Box::new(move |a: &GradArgs<'_, T>| {
            let g = a.grad;
            let gf = a.needs(0).then(|| {
                let mut gf = vec![T::zero(); h * w];
                for (c, gi) in cells.iter().zip(g) {
                    let gi = gi.as_f64();
                    let wts = [
                        (1.0 - c.fr) * (1.0 - c.fc),
                        (1.0 - c.fr) * c.fc,
                        c.fr * (1.0 - c.fc),
                        c.fr * c.fc,
                    ];
                    for (i, wt) in c.idx.iter().zip(wts) {
                        gf[*i] += T::of(gi * wt);
                    }
                }
                gf
            });
            let gp = a.needs(1).then(|| {
                let f = a.inputs[0].data();
                let mut gp = vec![T::zero(); n * 2];
                for (i, (c, gi)) in cells.iter().zip(g).enumerate() {
                    let gi = gi.as_f64();
                    let v = [
                        f[c.idx[0]].as_f64(),
                        f[c.idx[1]].as_f64(),
                        f[c.idx[2]].as_f64(),
                        f[c.idx[3]].as_f64(),
                    ];
                    if c.dr {
                        gp[2 * i] =
                            T::of(gi * ((1.0 - c.fc) * (v[2] - v[0]) + c.fc * (v[3] - v[1])));
                    }
                    if c.dc {
                        gp[2 * i + 1] =
                            T::of(gi * ((1.0 - c.fr) * (v[1] - v[0]) + c.fr * (v[3] - v[2])));
                    }
                }
                gp
            });
            vec![gf, gp]
        }),
    ))
}

/// Per-vertex (β, μ) at the contour's current positions.
pub fn sample_field<T: Scalar>(
    field: &VibrationField<T>,
    c: &Contour<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let pts = if field.coord_scale == 1.0 {
        c.k.clone()
    } else {
        c.k.scale(T::of(field.coord_scale))
    };
    Ok((
        bilinear_sample(&field.beta, &pts)?,
        bilinear_sample(&field.mu, &pts)?,
    ))
}

/// One explicit step of the recursion as a differentiable op.
fn vibration_step<T: Scalar>(
    k: &Tensor<T>,
    k_prev: &Tensor<T>,
    beta: &Tensor<T>,
    mu: &Tensor<T>,
    dt: f64,
    origin: [f64; 2],
) -> Result<Tensor<T>> {
    let n = k.shape()[0];
    if k.shape() != [n, 2] || k_prev.shape() != [n, 2] || beta.shape() != [n] || mu.shape() != [n] {
        return Err(Error::dim(
            "evolve_step",
            format!(
                "k {:?}, k_prev {:?}, β {:?}, μ {:?}",
                k.shape(),
                k_prev.shape(),
                beta.shape(),
                mu.shape()
            ),
        ));
    }
    let (kd, pd, bd, md) = (k.data(), k_prev.data(), beta.data(), mu.data());
    let dt = T::of(dt);
    let dt2 = dt * dt;
    let two = T::of(2.0);
    let org = [T::of(origin[0]), T::of(origin[1])];
    let q = |o: usize, d: usize| kd[2 * o + d] - org[d];
    let mut out = Vec::with_capacity(n * 2);
    for o in 0..n {
        let (prv, nxt) = ((o + n - 1) % n, (o + 1) % n);
        for d in 0..2 {
            let bk = bd[nxt] * q(nxt, d) - two * bd[o] * q(o, d) + bd[prv] * q(prv, d);
            let v = kd[2 * o + d] - pd[2 * o + d];
            out.push(kd[2 * o + d] + v + bk * dt2 - md[o] * v * dt);
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![n, 2],
        vec![k.clone(), k_prev.clone(), beta.clone(), mu.clone()],
        Box::new(move |a: &GradArgs<'_, T>| {
            let (kd, pd, bd, md) = (
                a.inputs[0].data(),
                a.inputs[1].data(),
                a.inputs[2].data(),
                a.inputs[3].data(),
            );
            let g = a.grad;
            let lap = |o: usize, d: usize| {
                let (prv, nxt) = ((o + n - 1) % n, (o + 1) % n);
                g[2 * prv + d] - two * g[2 * o + d] + g[2 * nxt + d]
            };
            let mut gk = vec![T::zero(); n * 2];
            let mut gp = vec![T::zero(); n * 2];
            let mut gb = vec![T::zero(); n];
            let mut gm = vec![T::zero(); n];
            for o in 0..n {
                for d in 0..2 {
                    let i = 2 * o + d;
                    let l = lap(o, d);
                    gk[i] = g[i] * (two - dt * md[o]) + dt2 * bd[o] * l;
                    gp[i] = g[i] * (dt * md[o] - T::one());
                    gb[o] += dt2 * (kd[i] - org[d]) * l;
                    gm[o] -= dt * g[i] * (kd[i] - pd[i]);
                }
            }
            vec![
                a.needs(0).then_some(gk),
                a.needs(1).then_some(gp),
                a.needs(2).then_some(gb),
                a.needs(3).then_some(gm),
            ]
        }),
    ))
}

/// Advances the contour by one step; non-finite results are an error.
pub fn evolve_step<T: Scalar>(
    c: &Contour<T>,
    beta: &Tensor<T>,
    mu: &Tensor<T>,
    dt: f64,
) -> Result<Contour<T>> {
    let next = vibration_step(&c.k, &c.k_prev, beta, mu, dt, c.origin)?;
    if !next.all_finite() {
        return Err(Error::Numeric(
            "contour evolution produced a non-finite vertex; aborted".into(),
        ));
    }
    Ok(Contour {
        k_prev: c.k.clone(),
        k: next,
        origin: c.origin,
    })
}

/// Outcome of [`evolve`].
#[derive(Clone, Debug)]
pub struct Evolution<T: Scalar> {
    pub contour: Contour<T>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Up to `steps` field samples and updates, stopping once the largest
/// per-step vertex displacement stays below 1e-3 px for 5 steps.
pub fn evolve<T: Scalar>(
    c: &Contour<T>,
    field: &VibrationField<T>,
    steps: usize,
) -> Result<Evolution<T>> {
    let mut cur = c.clone();
    let mut still = 0;
    for t in 0..steps {
        let (beta, mu) = sample_field(field, &cur)?;
        let next = evolve_step(&cur, &beta, &mu, field.dt)?;
        let moved = next
            .k
            .data()
            .chunks(2)
            .zip(cur.k.data().chunks(2))
            .map(|(a, b)| ((a[0] - b[0]).as_f64().powi(2) + (a[1] - b[1]).as_f64().powi(2)).sqrt())
            .fold(0.0, f64::max);
        cur = next;
        still = if moved < STILL_TOLERANCE {
            still + 1
        } else {
            0
        };
        if still >= PATIENCE {
            return Ok(Evolution {
                contour: cur,
                steps: t + 1,
                stopped_early: true,
            });
        }
    }
    Ok(Evolution {
        contour: cur,
        steps,
        stopped_early: false,
    })
}

/// Contours of a binary mask without a network: each component is traced,
/// set on its pixel edges and evolved under [`VibrationField::attracting`].
pub fn mask_contours(mask: &[bool], h: usize, w: usize, steps: usize) -> Result<Vec<Contour<f64>>> {
    let (init, _) = init_contour::<f64>(mask, h, w, VERTICES)?;
    if init.is_empty() {
        return Ok(Vec::new());
    }
    let field = VibrationField::<f64>::attracting(mask, h, w, ATTRACT_WIDTH, DT)?;
    init.iter()
        .map(|c| {
            let start = Contour::new(&outset_ring(&c.vertices(), INIT_OUTSET))?;
            Ok(evolve(&start, &field, steps)?.contour)
        })
        .collect()
}

/// Learned β/μ head: a 2-channel 1×1 convolution squashed by a sigmoid into
/// [0, β_max] and [0, μ_max].
#[derive(Clone, Debug)]
pub struct FieldHead<T: Scalar> {
    pub conv: Pointwise<T>,
}

impl<T: Scalar> FieldHead<T> {
    pub fn new(rng: &mut ModelRng, width: usize) -> Self {
        Self {
            conv: Pointwise::new(rng, width, 2, 0.1),
        }
    }

    /// Field on the feature grid; `coord_scale` maps contour coordinates
    /// onto it.
    pub fn forward(&self, features: &Tensor<T>, coord_scale: f64) -> Result<VibrationField<T>> {
        let y = self.conv.forward(features)?;
        let (h, w) = (y.shape()[1], y.shape()[2]);
        let beta = y
            .slice0(0, 1)?
            .sigmoid()
            .scale(T::of(BETA_MAX))
            .reshape(&[h, w])?;
        let mu = y
            .slice0(1, 2)?
            .sigmoid()
            .scale(T::of(MU_MAX))
            .reshape(&[h, w])?;
        Ok(VibrationField::new(beta, mu, DT, BETA_MAX, MU_MAX)?.with_coord_scale(coord_scale))
    }
}

impl<T: Scalar> Module<T> for FieldHead<T> {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.conv.visit(&join(p, "conv"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv.visit_mut(&join(p, "conv"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square4() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [0.0, 2.0], [2.0, 2.0], [2.0, 0.0]]
    }

    #[test]
    fn contour_needs_four_vertices() {
        assert!(Contour::<f64>::new(&square4()[..3]).is_err());
        assert!(
            Contour::<f64>::new(&[[0.0, f64::NAN], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).is_err()
        );
    }

    #[test]
    fn constant_field_samples_constant() {
        let f = VibrationField::<f64>::constant(5, 6, 0.7, 1.1, 0.1).unwrap();
        let c = Contour::new(&[[0.3, 0.2], [4.5, 1.0], [-3.0, 9.0], [2.2, 2.8]]).unwrap();
        let (b, m) = sample_field(&f, &c).unwrap();
        assert!(b.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
        assert!(m.data().iter().all(|v| (v - 1.1).abs() < 1e-15));
    }

    #[test]
    fn grid_node_and_cell_centre_samples() {
        let field = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 5.0], &[2, 2]).unwrap();
        let pts = Tensor::<f64>::new(vec![1.0, 0.0, 0.5, 0.5, 0.25, 0.75], &[3, 2]).unwrap();
        let s = bilinear_sample(&field, &pts).unwrap();
        assert_eq!(s.data()[0], 3.0);
        assert!((s.data()[1] - 2.75).abs() < 1e-15);
        let manual = 0.75 * (0.25 * 1.0 + 0.75 * 2.0) + 0.25 * (0.25 * 3.0 + 0.75 * 5.0);
        assert!((s.data()[2] - manual).abs() < 1e-15);
    }

    #[test]
    fn rest_stays_at_rest_and_free_motion_continues() {
        let c = Contour::<f64>::new(&square4()).unwrap();
        let zero = Tensor::zeros(&[4]);
        let n = evolve_step(&c, &zero, &zero, 0.1).unwrap();
        assert_eq!(n.k.data(), c.k.data());
        let v = vec![[0.5, -0.25]; 4];
        let c = Contour::<f64>::with_velocity(&square4(), &v).unwrap();
        let n = evolve_step(&c, &zero, &zero, 0.1).unwrap();
        for (a, (k, p)) in
            n.k.data()
                .iter()
                .zip(c.k.data().iter().zip(c.k_prev.data()))
        {
            assert_eq!(*a, 2.0 * k - p);
        }
    }

    #[test]
    fn square_step_matches_direct_arithmetic() {
        let c = Contour::<f64>::new(&square4()).unwrap();
        let ones = Tensor::full(&[4], 1.0);
        let zero = Tensor::zeros(&[4]);
        let n = evolve_step(&c, &ones, &zero, 0.1).unwrap();
        // Origin (1,1); relative vertices (−1,−1),(−1,1),(1,1),(1,−1).
        let q = [[-1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [1.0, -1.0]];
        let k = square4();
        for o in 0..4 {
            for d in 0..2 {
                let bk = q[(o + 1) % 4][d] - 2.0 * q[o][d] + q[(o + 3) % 4][d];
                let expect = 2.0 * k[o][d] - k[o][d] + bk * 0.01;
                assert!((n.k.data()[2 * o + d] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_steps_return_input() {
        let f = VibrationField::<f64>::constant(4, 4, 1.0, 0.5, 0.1).unwrap();
        let c = Contour::new(&square4()).unwrap();
        let e = evolve(&c, &f, 0).unwrap();
        assert_eq!(e.contour.k.data(), c.k.data());
        assert_eq!(e.steps, 0);
    }

    #[test]
    fn damping_decays_velocity_geometrically() {
        let f = VibrationField::<f64>::constant(8, 8, 0.0, 2.0, 0.1).unwrap();
        let mut c = Contour::with_velocity(&square4(), &[[0.3, 0.1]; 4]).unwrap();
        let mut speed = 0.3;
        for _ in 0..20 {
            let (b, m) = sample_field(&f, &c).unwrap();
            let n = evolve_step(&c, &b, &m, 0.1).unwrap();
            speed *= 1.0 - 2.0 * 0.1;
            assert!((n.k.data()[0] - c.k.data()[0] - speed).abs() < 1e-12);
            c = n;
        }
    }

    #[test]
    fn field_bounds_enforced() {
        assert!(VibrationField::<f64>::constant(2, 2, 200.0, 0.0, 0.1).is_err());
        let beta = Tensor::new(vec![0.5, 1.5, 0.5, 0.5], &[2, 2]).unwrap();
        assert!(VibrationField::<f64>::new(beta, Tensor::zeros(&[2, 2]), 0.1, 1.0, 2.0).is_err());
    }

    #[test]
    fn early_stop_when_still() {
        let f = VibrationField::<f64>::constant(4, 4, 0.0, 1.0, 0.1).unwrap();
        let e = evolve(&Contour::new(&square4()).unwrap(), &f, 50).unwrap();
        assert!(e.stopped_early);
        assert_eq!(e.steps, PATIENCE);
    }

    #[test]
    fn field_head_ranges() {
        use rand::SeedableRng;
        let mut rng = ModelRng::seed_from_u64(0);
        let head = FieldHead::<f64>::new(&mut rng, 3);
        let feats = Tensor::full(&[3, 4, 4], 5.0);
        let f = head.forward(&feats, 0.25).unwrap();
        assert_eq!(f.beta.shape(), &[4, 4]);
        assert!(f.beta.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(f.mu.data().iter().all(|v| (0.0..=2.0).contains(v)));
    }

    #[test]
    fn disk_mask_converges() {
        let (h, w) = (64, 64);
        let disk: Vec<bool> = (0..h * w)
            .map(|i| ((i / w) as f64 - 31.5).powi(2) + ((i % w) as f64 - 31.5).powi(2) <= 400.0)
            .collect();
        let cs = mask_contours(&disk, h, w, 200).unwrap();
        assert_eq!(cs.len(), 1);
        let poly = rasterize_polygon(&cs[0].vertices(), h, w);
        let inter = poly.iter().zip(&disk).filter(|(a, b)| **a && **b).count() as f64;
        let union = poly.iter().zip(&disk).filter(|(a, b)| **a || **b).count() as f64;
        assert!(inter / union >= 0.95, "IoU {}", inter / union);
    }
}
