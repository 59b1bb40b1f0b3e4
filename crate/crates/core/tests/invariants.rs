use proptest::prelude::*;

use terravec_core::dataforge::{box_downsample, detrend, Augmentation, Raster};
use terravec_core::losses::{chamfer, class_weights, lovasz_hinge};
use terravec_core::optim::{clip_global_norm, cosine_lr, global_norm};
use terravec_core::srtcm::{window_merge, window_partition};
use terravec_core::vem::{douglas_peucker_closed, emit_polygons, rasterize_polygon, signed_area};
use terravec_core::Tensor64;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn points(max: usize) -> impl Strategy<Value = Vec<f64>> {
    (1..=max).prop_flat_map(|n| prop::collection::vec(-10.0f64..10.0, 2 * n))
}

/// Star-shaped ring around (20, 20), counter-clockwise or not.
fn star_ring() -> impl Strategy<Value = (Vec<[f64; 2]>, bool)> {
    (5usize..24).prop_flat_map(|n| {
        (prop::collection::vec(4.0f64..15.0, n), any::<bool>()).prop_map(move |(radii, flip)| {
            let mut ring: Vec<[f64; 2]> = radii
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64;
                    [20.0 + r * a.sin(), 20.0 + r * a.cos()]
                })
                .collect();
            if flip {
                ring.reverse();
            }
            (ring, flip)
        })
    })
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f64],
    wt: &[f64],
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for r in 0..oh {
            for col in 0..ow {
                let mut acc = 0.0;
                for ic in 0..c {
                    for dr in 0..k {
                        for dc in 0..k {
                            let y = (r * stride + dr) as isize - pad as isize;
                            let xx = (col * stride + dc) as isize - pad as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += x[(ic * h + y as usize) * w + xx as usize]
                                * wt[((oc * c + ic) * k + dr) * k + dc];
                        }
                    }
                }
                out[(oc * oh + r) * ow + col] = acc;
            }
        }
    }
    (out, oh, ow)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_partition_roundtrips(
        (c, h, w, k, data) in (1usize..4, 1usize..13, 1usize..13, 1usize..6)
            .prop_flat_map(|(c, h, w, k)| (Just(c), Just(h), Just(w), Just(k), values(c * h * w)))
    ) {
        let x = Tensor64::new(data.clone(), &[c, h, w]).unwrap();
        let grid = window_partition(&x, k).unwrap();
        prop_assert_eq!(grid.rows() * k, h + grid.pad_bottom);
        prop_assert_eq!(grid.cols() * k, w + grid.pad_right);
        prop_assert!(grid.pad_bottom < k && grid.pad_right < k);
        let padded = grid.padding_mask().iter().filter(|p| **p).count();
        prop_assert_eq!(padded, grid.len() * k * k - h * w);
        let back = window_merge(&grid).unwrap();
        prop_assert_eq!(back.shape(), &[c, h, w][..]);
        prop_assert_eq!(back.data(), &data[..]);
    }

    #[test]
    fn softmax_rows_are_distributions(
        (r, n, data) in (1usize..6, 1usize..9)
            .prop_flat_map(|(r, n)| (Just(r), Just(n), prop::collection::vec(-40.0f64..40.0, r * n)))
    ) {
        let p = Tensor64::new(data, &[r, n]).unwrap().softmax(1).unwrap();
        for row in p.data().chunks(n) {
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_naive_product(
        (m, k, n, a, b) in (1usize..7, 1usize..7, 1usize..7)
            .prop_flat_map(|(m, k, n)| (Just(m), Just(k), Just(n), values(m * k), values(k * n)))
    ) {
        let ta = Tensor64::new(a.clone(), &[m, k]).unwrap();
        let tb = Tensor64::new(b.clone(), &[k, n]).unwrap();
        let want = naive_matmul(&a, &b, m, k, n);
        prop_assert!(close(ta.matmul(&tb).unwrap().data(), &want, 1e-12));
        let nt = ta.matmul_nt(&tb.transpose2d().unwrap()).unwrap();
        prop_assert!(close(nt.data(), &want, 1e-12));
        let tn = ta.transpose2d().unwrap().matmul_tn(&tb).unwrap();
        prop_assert!(close(tn.data(), &want, 1e-12));
    }

    #[test]
    fn conv2d_matches_naive_loop(
        (c, o, h, w, k, stride, pad, x, wt) in (1usize..3, 1usize..3, 3usize..8, 3usize..8, 1usize..4, 1usize..3, 0usize..2)
            .prop_flat_map(|(c, o, h, w, k, s, p)| {
                (Just(c), Just(o), Just(h), Just(w), Just(k), Just(s), Just(p),
                 values(c * h * w), values(o * c * k * k))
            })
    ) {
        let tx = Tensor64::new(x.clone(), &[c, h, w]).unwrap();
        let tw = Tensor64::new(wt.clone(), &[o, c, k, k]).unwrap();
        let y = tx.conv2d(&tw, None, stride, pad).unwrap();
        let (want, oh, ow) = naive_conv(&x, &wt, c, h, w, o, k, stride, pad);
        prop_assert_eq!(y.shape(), &[o, oh, ow][..]);
        prop_assert!(close(y.data(), &want, 1e-12));
    }

    #[test]
    fn chamfer_is_a_symmetric_nonnegative_distance(a in points(8), b in points(8)) {
        let ta = Tensor64::new(a.clone(), &[a.len() / 2, 2]).unwrap();
        let tb = Tensor64::new(b.clone(), &[b.len() / 2, 2]).unwrap();
        let ab = chamfer(&ta, &tb).unwrap().data()[0];
        let ba = chamfer(&tb, &ta).unwrap().data()[0];
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(chamfer(&ta, &ta).unwrap().data()[0], 0.0);
    }

    #[test]
    fn lovasz_hinge_is_bounded_and_vanishes_on_confident_margins(
        (s, y) in (1usize..20).prop_flat_map(|n| (values(n), prop::collection::vec(any::<bool>(), n)))
    ) {
        let yv: Vec<f64> = y.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        let loss = lovasz_hinge(&Tensor64::new(s.clone(), &[s.len()]).unwrap(), &yv)
            .unwrap()
            .data()[0];
        let worst = s.iter().map(|v| 1.0 + v.abs()).fold(0.0, f64::max);
        prop_assert!((0.0..=worst + 1e-12).contains(&loss));
        let confident: Vec<f64> = s
            .iter()
            .zip(&y)
            .map(|(v, b)| (1.0 + v.abs()) * if *b { 1.0 } else { -1.0 })
            .collect();
        let zero = lovasz_hinge(&Tensor64::new(confident, &[s.len()]).unwrap(), &yv).unwrap();
        prop_assert_eq!(zero.data()[0], 0.0);
    }

    #[test]
    fn class_weights_sum_to_two(y in prop::collection::vec(any::<bool>(), 1..200)) {
        let yv: Vec<f64> = y.iter().map(|b| *b as u8 as f64).collect();
        let (wp, wn) = class_weights(&yv);
        prop_assert!(wp > 0.0 && wn > 0.0);
        prop_assert!((wp + wn - 2.0).abs() < 1e-12);
        let pos = y.iter().filter(|b| **b).count() * 2;
        if pos < y.len() {
            prop_assert!(wp > wn);
        }
    }

    #[test]
    fn cosine_schedule_decays_between_bounds(lr0 in 1e-5f64..1.0, frac in 0.0f64..1.0, total in 1usize..2000) {
        let lr_min = lr0 * frac;
        let mut prev = f64::INFINITY;
        for step in (0..=total).step_by((total / 50).max(1)) {
            let lr = cosine_lr(lr0, lr_min, step, total);
            prop_assert!(lr >= lr_min - 1e-15 && lr <= lr0 + 1e-15);
            prop_assert!(lr <= prev + 1e-15);
            prev = lr;
        }
        prop_assert!((cosine_lr(lr0, lr_min, total, total) - lr_min).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_the_norm_and_keeps_direction(
        g in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..8), 1..4),
        cap in 0.1f64..20.0,
    ) {
        let mut clipped = g.clone();
        let before = clip_global_norm(&mut clipped, cap);
        prop_assert!((before - global_norm(&g)).abs() < 1e-12);
        prop_assert!(global_norm(&clipped) <= cap * (1.0 + 1e-12) || before <= cap);
        let s = if before > cap { cap / before } else { 1.0 };
        for (a, b) in g.iter().flatten().zip(clipped.iter().flatten()) {
            prop_assert!((a * s - b).abs() < 1e-12);
        }
    }

    #[test]
    fn box_downsampling_preserves_the_mean(
        (size, out, data) in (2usize..24)
            .prop_flat_map(|s| (Just(s), 1..=s, prop::collection::vec(0.0f64..1.0, s * s)))
    ) {
        let x = Raster::new(1, size, data.clone()).unwrap();
        let y = box_downsample(&x, out).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((mean(&y.data) - mean(&data)).abs() < 1e-9);
    }

    #[test]
    fn detrend_removes_planes(a in -50.0f64..50.0, b in -3.0f64..3.0, c in -3.0f64..3.0, size in 2usize..20) {
        let data = (0..size * size)
            .map(|i| a + b * (i / size) as f64 + c * (i % size) as f64)
            .collect();
        let r = detrend(&Raster::new(1, size, data).unwrap());
        prop_assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn emitted_rings_are_closed_and_counter_clockwise((ring, _) in star_ring(), tol in 0.0f64..2.0) {
        let set = emit_polygons(std::slice::from_ref(&ring), tol, None);
        prop_assert_eq!(set.len(), 1);
        let p = &set.polygons[0];
        prop_assert_eq!(p.ring.first(), p.ring.last());
        prop_assert!(p.ring.len() >= 4);
        prop_assert!(signed_area(p.open_ring()) > 0.0);
        // Emitted rings are (x, y) = (col, row); every vertex must come from the input.
        for q in p.open_ring() {
            prop_assert!(ring.iter().any(|v| v[1] == q[0] && v[0] == q[1]));
        }
    }

    #[test]
    fn simplification_keeps_a_subsequence((ring, _) in star_ring(), tol in 0.0f64..3.0) {
        let simple = douglas_peucker_closed(&ring, tol);
        prop_assert!(simple.len() <= ring.len());
        let mut it = ring.iter();
        for q in &simple {
            prop_assert!(it.any(|v| v == q));
        }
        if tol == 0.0 {
            prop_assert_eq!(simple, ring);
        }
    }

    #[test]
    fn reversing_a_ring_flips_its_area((ring, _) in star_ring()) {
        let mut rev = ring.clone();
        rev.reverse();
        prop_assert!((signed_area(&ring) + signed_area(&rev)).abs() < 1e-9);
    }

    #[test]
    fn rectangles_rasterize_to_their_pixel_count(r0 in 0usize..10, c0 in 0usize..10, dr in 0usize..10, dc in 0usize..10) {
        let (r1, c1) = (r0 + dr, c0 + dc);
        let ring = [
            [r0 as f64 - 0.5, c0 as f64 - 0.5],
            [r0 as f64 - 0.5, c1 as f64 + 0.5],
            [r1 as f64 + 0.5, c1 as f64 + 0.5],
            [r1 as f64 + 0.5, c0 as f64 - 0.5],
        ];
        let mask = rasterize_polygon(&ring, 24, 24);
        prop_assert_eq!(mask.iter().filter(|m| **m).count(), (dr + 1) * (dc + 1));
        for r in 0..24 {
            for c in 0..24 {
                let inside = (r0..=r1).contains(&r) && (c0..=c1).contains(&c);
                prop_assert_eq!(mask[r * 24 + c], inside);
            }
        }
    }

    #[test]
    fn four_quarter_turns_are_the_identity(x in 0.0f64..31.0, y in 0.0f64..31.0) {
        let turn = Augmentation { quarter_turns: 1, ..Augmentation::IDENTITY };
        let mut p = [x, y];
        for _ in 0..4 {
            p = turn.map_point(p, 32);
        }
        prop_assert!((p[0] - x).abs() < 1e-12 && (p[1] - y).abs() < 1e-12);
    }
}
