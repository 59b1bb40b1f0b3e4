//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The process exits nonzero only when a criterion cannot be evaluated at
//! all, or when `ACCEPTANCE_STRICT` is set and a criterion fails.
//! `ACCEPTANCE_ONLY=1,5` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::env;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde_json::Value;
use terravec_core::dataforge::{generate_dataset, DualModalTile, Grouping};
use terravec_core::gradcheck::{run_suite, DEFAULT_CASES};
use terravec_core::losses::{
    chamfer, lovasz_hinge, margin, total_loss, weighted_bce, ContourPair, LossWeights,
};
use terravec_core::model::TerraceNet;
use terravec_core::nn::ModelRng;
use terravec_core::omega::{InputMode, NetInput, NetworkConfig, OmegaNet};
use terravec_core::srtcm::{window_merge, window_mhsa_batched, window_partition, AttentionWeights};
use terravec_core::stsro::{relation_from_keys, SoftObjectRegions};
use terravec_core::trainer::{
    ablation_matrix, eval_loss, report_csv, train_tiles, Cell, ExperimentConfig,
};
use terravec_core::vem::{
    evolve_step, mask_contours, sample_field, Contour, VibrationField, BETA_MAX, DT, VERTICES,
};
use terravec_core::Tensor64 as Tensor;

struct Verdict {
    pass: bool,
    detail: String,
}

type Outcome = Result<Verdict, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ModelRng {
    ModelRng::seed_from_u64(seed)
}

fn uniform(r: &mut ModelRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| r.gen_range(lo..hi)).collect(), shape).unwrap()
}

// 1. Finite differences.

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let reports = run_suite(DEFAULT_CASES, None);
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.op.as_str())
        .collect();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .ok_or("the suite is empty")?;
    let min_cases = reports.iter().map(|r| r.cases).min().unwrap_or(0);
    let groups: std::collections::BTreeSet<&str> = reports
        .iter()
        .filter_map(|r| r.op.split('/').next())
        .collect();
    let wanted = ["losses", "omega", "srtcm", "stsro", "tensor", "vem"];
    let covered = wanted.iter().all(|g| groups.contains(g));
    Ok(Verdict {
        pass: failed.is_empty() && min_cases >= 20 && secs < 300.0 && covered,
        detail: format!(
            "{} ops in {:?}, {} cases each, worst {} at {:.2e}, {:.0} s; failed {:?}",
            reports.len(),
            groups,
            min_cases,
            worst.op,
            worst.max_rel_err,
            secs,
            failed
        ),
    })
}

// 2. Structural invariants.

fn structural() -> Outcome {
    let mut r = rng(2);
    let mut notes = Vec::new();

    let mut roundtrip = true;
    for _ in 0..10 {
        let (c, h, w, k) = (
            r.gen_range(1..4),
            r.gen_range(1..13),
            r.gen_range(1..13),
            r.gen_range(1..5),
        );
        let x = uniform(&mut r, &[c, h, w], -1.0, 1.0);
        let back = window_merge(&window_partition(&x, k).map_err(err)?).map_err(err)?;
        roundtrip &= back.shape() == x.shape() && back.data() == x.data();
    }
    notes.push(format!(
        "window roundtrip {}",
        if roundtrip { "exact" } else { "BROKEN" }
    ));

    let mut row_dev: f64 = 0.0;
    let mut padded_mass: f64 = 0.0;
    for seed in 0..5 {
        let (heads, k) = (1 + seed % 3, 2 + seed % 3);
        let c = heads * 4;
        let weights = AttentionWeights::<f64>::new(&mut r, c, heads, k).map_err(err)?;
        let x = uniform(&mut r, &[c, 2 * k + 1, k + 2], -2.0, 2.0);
        let grid = window_partition(&x, k).map_err(err)?;
        let pad = grid.padding_mask();
        let out = window_mhsa_batched(&grid.windows, &weights, Some(&pad)).map_err(err)?;
        let k2 = k * k;
        for (row_i, row) in out.attention.data().chunks(k2).enumerate() {
            row_dev = row_dev.max((row.iter().sum::<f64>() - 1.0).abs());
            let window = row_i / k2 / heads;
            for (j, p) in row.iter().enumerate() {
                if pad[window * k2 + j] {
                    padded_mass = padded_mass.max(p.abs());
                }
            }
        }
    }
    notes.push(format!(
        "attention rows |Σ−1| ≤ {row_dev:.1e}, padded keys ≤ {padded_mass:.1e}"
    ));

    let mut n_dev: f64 = 0.0;
    let mut mu_dev: f64 = 0.0;
    for _ in 0..5 {
        let (m, h, w) = (r.gen_range(1..4), r.gen_range(1..9), r.gen_range(1..9));
        let soft =
            SoftObjectRegions::from_scores(&uniform(&mut r, &[m, h, w], -6.0, 6.0)).map_err(err)?;
        for region in soft.weights.data().chunks(h * w) {
            n_dev = n_dev.max((region.iter().sum::<f64>() - 1.0).abs());
        }
        let kd = r.gen_range(1..6);
        let mu = relation_from_keys(
            &uniform(&mut r, &[kd, h * w], -3.0, 3.0),
            &uniform(&mut r, &[m, kd], -3.0, 3.0),
        )
        .map_err(err)?;
        for i in 0..h * w {
            let s: f64 = (0..m).map(|j| mu.data()[j * h * w + i]).sum();
            mu_dev = mu_dev.max((s - 1.0).abs());
        }
    }
    notes.push(format!("ñ |Σ−1| ≤ {n_dev:.1e}, μ |Σ−1| ≤ {mu_dev:.1e}"));

    let mut schedule_ok = 0;
    for seed in 0..5u64 {
        let mut cr = rng(100 + seed);
        let stages: usize = cr.gen_range(1..4);
        let base = [2, 4][cr.gen_range(0..2)];
        let input: usize = (4usize << (stages - 1)).max(16) * cr.gen_range(1..3);
        let input = input.div_ceil(16) * 16;
        let heads: Vec<usize> = (0..stages)
            .map(|s| [1, 2][cr.gen_range(0..2)].min(base << s))
            .collect();
        let windows: Vec<usize> = (0..stages).map(|_| cr.gen_range(1..5)).collect();
        let mode = InputMode::ALL[cr.gen_range(0..4)];
        let cfg = NetworkConfig {
            input_size: input,
            base_channels: base,
            stages,
            heads,
            windows,
            head_width: 6,
            key_width: 3,
            input_mode: mode,
            ..NetworkConfig::default()
        };
        cfg.validate().map_err(err)?;
        let net = OmegaNet::<f64>::new(&cfg, &mut cr).map_err(err)?;
        let input_t = NetInput {
            rgb: Some(uniform(&mut cr, &[3, input, input], 0.0, 1.0)),
            dem: Some(uniform(&mut cr, &[1, input, input], -1.0, 1.0)),
        };
        let out = net.forward(&input_t, None).map_err(err)?;
        // Stage i carries streams 0..=i; stream s has 2^s·C0 channels at (S/4)/2^s.
        let expected: Vec<Vec<(usize, usize, usize)>> = (0..stages)
            .map(|i| {
                (0..=i)
                    .map(|s| (base * (1 << s), input / 4 / (1 << s), input / 4 / (1 << s)))
                    .collect()
            })
            .collect();
        if out.schedule == expected && out.pixel_features.shape() == [6, input / 4, input / 4] {
            schedule_ok += 1;
        }
    }
    notes.push(format!("stream schedule {schedule_ok}/5 configs"));

    Ok(Verdict {
        pass: roundtrip
            && row_dev <= 1e-9
            && padded_mass == 0.0
            && n_dev <= 1e-9
            && mu_dev <= 1e-9
            && schedule_ok == 5,
        detail: notes.join("; "),
    })
}

// 3. Loss oracles.

/// Lovász extension as the integral over thresholds of the Jaccard loss of
/// the level sets of the hinge errors.
fn lovasz_oracle(s: &[f64], y: &[f64]) -> f64 {
    let m: Vec<f64> = s
        .iter()
        .zip(y)
        .map(|(si, yi)| (1.0 - si * (2.0 * yi - 1.0)).max(0.0))
        .collect();
    let gt: f64 = y.iter().sum();
    if gt == 0.0 {
        return 0.0;
    }
    let jaccard_loss = |t: f64| {
        let (mut fneg, mut fpos) = (0.0, 0.0);
        for (mi, yi) in m.iter().zip(y) {
            if *mi >= t {
                if *yi > 0.5 {
                    fneg += 1.0
                } else {
                    fpos += 1.0
                }
            }
        }
        1.0 - (gt - fneg) / (gt + fpos)
    };
    let mut levels: Vec<f64> = m.iter().copied().filter(|v| *v > 0.0).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut total = 0.0;
    for (i, v) in levels.iter().enumerate() {
        let next = levels.get(i + 1).copied().unwrap_or(0.0);
        total += (v - next) * jaccard_loss(*v);
    }
    total
}

fn chamfer_oracle(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let dir = |p: &[[f64; 2]], q: &[[f64; 2]]| {
        let mut sum = 0.0;
        for x in p {
            let mut best = f64::INFINITY;
            for z in q {
                let d = (x[0] - z[0]) * (x[0] - z[0]) + (x[1] - z[1]) * (x[1] - z[1]);
                if d < best {
                    best = d;
                }
            }
            sum += best;
        }
        sum / p.len() as f64
    };
    dir(a, b) + dir(b, a)
}

fn loss_oracles() -> Outcome {
    let mut r = rng(3);
    let mut lovasz_dev: f64 = 0.0;
    let mut cases = 0;
    for n in 1..=8 {
        for _ in 0..25 {
            let s: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(r.gen_bool(0.5))).collect();
            let got = lovasz_hinge(&Tensor::new(s.clone(), &[n]).map_err(err)?, &y)
                .map_err(err)?
                .item();
            lovasz_dev = lovasz_dev.max((got - lovasz_oracle(&s, &y)).abs());
            cases += 1;
        }
    }

    let mut chamfer_exact = true;
    for _ in 0..50 {
        let (na, nb) = (r.gen_range(1..20), r.gen_range(1..20));
        let a: Vec<[f64; 2]> = (0..na)
            .map(|_| [r.gen_range(-9.0..9.0), r.gen_range(-9.0..9.0)])
            .collect();
        let b: Vec<[f64; 2]> = (0..nb)
            .map(|_| [r.gen_range(-9.0..9.0), r.gen_range(-9.0..9.0)])
            .collect();
        let ta = Tensor::new(a.iter().flatten().copied().collect(), &[na, 2]).map_err(err)?;
        let tb = Tensor::new(b.iter().flatten().copied().collect(), &[nb, 2]).map_err(err)?;
        chamfer_exact &= chamfer(&ta, &tb).map_err(err)?.item() == chamfer_oracle(&a, &b);
    }

    let mut bce_dev: f64 = 0.0;
    for _ in 0..50 {
        let n = r.gen_range(1..30);
        let p: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(r.gen_bool(0.4))).collect();
        let (wp, wn) = (r.gen_range(0.1..1.9), r.gen_range(0.1..1.9));
        let direct = -p
            .iter()
            .zip(&y)
            .map(|(p, y)| wp * y * p.ln() + wn * (1.0 - y) * (1.0 - p).ln())
            .sum::<f64>()
            / n as f64;
        bce_dev = bce_dev.max((weighted_bce(&p, &y, wp, wn).map_err(err)? - direct).abs());
    }

    let mut recompose_dev: f64 = 0.0;
    for _ in 0..20 {
        let (h, w) = (r.gen_range(2..7), r.gen_range(2..7));
        let logits = uniform(&mut r, &[2, h, w], -3.0, 3.0);
        let aux = uniform(&mut r, &[2, h, w], -3.0, 3.0);
        let y: Vec<f64> = (0..h * w).map(|_| f64::from(r.gen_bool(0.5))).collect();
        let pairs: Vec<ContourPair<f64>> = (0..r.gen_range(0..3))
            .map(|_| ContourPair {
                predicted: uniform(&mut r, &[6, 2], 0.0, 5.0),
                reference: uniform(&mut r, &[6, 2], 0.0, 5.0),
            })
            .collect();
        let wts = LossWeights {
            gamma: r.gen_range(0.5..2.0),
            theta: r.gen_range(0.05..0.5),
            aux: r.gen_range(0.0..1.0),
        };
        let cw = (r.gen_range(0.2..1.8), r.gen_range(0.2..1.8));
        let (total, br) = total_loss(&logits, Some(&aux), &pairs, &y, cw, &wts).map_err(err)?;
        // Separately: BCE on σ(margin), Lovász on margin, mean chamfer, aux BCE.
        let sig = |t: &Tensor| -> Vec<f64> {
            margin(t)
                .unwrap()
                .data()
                .iter()
                .map(|v| 1.0 / (1.0 + (-v).exp()))
                .collect()
        };
        let l1 = weighted_bce(&sig(&logits), &y, cw.0, cw.1).map_err(err)?;
        let l2 = lovasz_hinge(&margin(&logits).map_err(err)?, &y)
            .map_err(err)?
            .item();
        let l3 = if pairs.is_empty() {
            0.0
        } else {
            pairs
                .iter()
                .map(|p| chamfer(&p.predicted, &p.reference).unwrap().item())
                .sum::<f64>()
                / pairs.len() as f64
        };
        let la = weighted_bce(&sig(&aux), &y, cw.0, cw.1).map_err(err)?;
        let expect = l1 + wts.gamma * l2 + wts.theta * l3 + wts.aux * la;
        recompose_dev = recompose_dev
            .max((total.item() - expect).abs())
            .max((br.l1 + br.l2 + br.l3 + br.aux - br.total).abs());
    }

    Ok(Verdict {
        pass: lovasz_dev <= 1e-9 && chamfer_exact && bce_dev <= 1e-12 && recompose_dev <= 1e-12,
        detail: format!(
            "lovász {cases} cases (n ≤ 8) max dev {lovasz_dev:.1e}; chamfer {}; bce dev {bce_dev:.1e}; recomposition dev {recompose_dev:.1e}",
            if chamfer_exact { "exact" } else { "MISMATCH" }
        ),
    })
}

// 4. Contour dynamics.

fn star(r: &mut ModelRng, n: usize, centre: [f64; 2], radius: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            let rr = radius * r.gen_range(0.7..1.3);
            [centre[0] + rr * a.sin(), centre[1] + rr * a.cos()]
        })
        .collect()
}

fn step_n(c: &Contour<f64>, f: &VibrationField<f64>) -> Result<Contour<f64>, String> {
    let (b, m) = sample_field(f, c).map_err(err)?;
    evolve_step(c, &b, &m, f.dt).map_err(err)
}

fn vem_dynamics() -> Outcome {
    let mut r = rng(4);
    // Dyadic positions and velocities keep free motion exact in floating point.
    let dy = |r: &mut ModelRng, lo: i32, hi: i32| r.gen_range(lo..hi) as f64 / 64.0;
    let pos: Vec<[f64; 2]> = (0..16)
        .map(|_| [dy(&mut r, 0, 1024), dy(&mut r, 0, 1024)])
        .collect();
    let vel: Vec<[f64; 2]> = (0..16)
        .map(|_| [dy(&mut r, -32, 32), dy(&mut r, -32, 32)])
        .collect();
    let free = VibrationField::<f64>::constant(32, 32, 0.0, 0.0, 0.125).map_err(err)?;
    let momentum = |c: &Contour<f64>| -> [f64; 2] {
        let d: Vec<f64> =
            c.k.data()
                .iter()
                .zip(c.k_prev.data())
                .map(|(a, b)| a - b)
                .collect();
        [d.iter().step_by(2).sum(), d.iter().skip(1).step_by(2).sum()]
    };
    let mut c = Contour::with_velocity(&pos, &vel).map_err(err)?;
    let p0 = momentum(&c);
    let mut conserved = true;
    for _ in 0..200 {
        c = step_n(&c, &free)?;
        conserved &= momentum(&c) == p0;
    }

    let (mu, dt) = (1.7, 0.1);
    let damped = VibrationField::<f64>::constant(32, 32, 0.0, mu, dt).map_err(err)?;
    let mut c = Contour::with_velocity(&star(&mut r, 12, [16.0, 16.0], 5.0), &[[0.4, -0.3]; 12])
        .map_err(err)?;
    let v0 = momentum(&c);
    let mut decay_dev: f64 = 0.0;
    for t in 1..=60 {
        c = step_n(&c, &damped)?;
        let factor = (1.0 - mu * dt).powi(t);
        let v = momentum(&c);
        decay_dev = decay_dev
            .max((v[0] - v0[0] * factor).abs())
            .max((v[1] - v0[1] * factor).abs());
    }

    // Pixel-wise random fields, 10 seeded contours each; the verdict uses
    // β_max·Δt² = 1, the edge of the bound. The default ratio is reported too.
    let stable_at = |ratio: f64| -> Result<usize, String> {
        let mut stable = 0;
        for seed in 0..10 {
            let mut fr = rng(40 + seed);
            let dt = 0.1;
            let beta_max = ratio / (dt * dt);
            let (h, w) = (48, 48);
            let beta = uniform(&mut fr, &[h, w], 0.0, beta_max);
            let mu = uniform(&mut fr, &[h, w], 0.0, 2.0);
            let field = VibrationField::new(beta, mu, dt, beta_max, 2.0).map_err(err)?;
            let mut c = Contour::new(&star(&mut fr, VERTICES, [24.0, 24.0], 12.0)).map_err(err)?;
            let mut ok = true;
            for _ in 0..10_000 {
                match step_n(&c, &field) {
                    Ok(n) => c = n,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            stable += usize::from(ok && c.k.all_finite());
        }
        Ok(stable)
    };
    let stable = stable_at(1.0)?;
    let default_ratio = BETA_MAX * DT * DT;
    let stable_default = stable_at(default_ratio)?;

    Ok(Verdict {
        pass: conserved && decay_dev <= 1e-9 && stable == 10,
        detail: format!(
            "free momentum {} over 200 steps; damping dev {decay_dev:.1e}; {stable}/10 contours finite over 10⁴ steps at β_max·Δt² = 1, {stable_default}/10 at the default {default_ratio:.2}",
            if conserved { "exact" } else { "DRIFTS" }
        ),
    })
}

// 5. Disk vectorization.

fn inside(ring: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut odd = false;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        if (a[0] > p[0]) != (b[0] > p[0]) {
            let col = a[1] + (p[0] - a[0]) / (b[0] - a[0]) * (b[1] - a[1]);
            if p[1] < col {
                odd = !odd;
            }
        }
    }
    odd
}

fn disk_vectorization() -> Outcome {
    let t = Instant::now();
    let n = 64;
    let disk: Vec<bool> = (0..n * n)
        .map(|i| ((i / n) as f64 - 32.0).powi(2) + ((i % n) as f64 - 32.0).powi(2) <= 400.0)
        .collect();
    let contours = mask_contours(&disk, n, n, 200).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let [c] = contours.as_slice() else {
        return Ok(Verdict {
            pass: false,
            detail: format!("{} contours for one disk", contours.len()),
        });
    };
    let ring = c.vertices();
    let (mut inter, mut union) = (0usize, 0usize);
    for (i, d) in disk.iter().enumerate() {
        let p = inside(&ring, [(i / n) as f64, (i % n) as f64]);
        inter += usize::from(p && *d);
        union += usize::from(p || *d);
    }
    let iou = inter as f64 / union as f64;
    Ok(Verdict {
        pass: ring.len() == 64 && iou >= 0.95 && secs < 10.0,
        detail: format!(
            "{} vertices, IoU {iou:.4} after ≤ 200 iterations, {secs:.2} s",
            ring.len()
        ),
    })
}

// 6. Overfitting four tiles.

fn overfit() -> Outcome {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.data.tiles = 4;
    // A fixed batch: the same four tiles, unaugmented, every step.
    cfg.train.augment = false;
    let data = generate_dataset(&cfg.data).map_err(err)?;
    let tiles: Vec<&DualModalTile> = data.tiles.iter().collect();
    let mut probes: Vec<(usize, f64)> = Vec::new();
    let (loss, vem_start, vem_steps) = (cfg.loss, cfg.train.vem_start(), cfg.train.vem_steps);
    let mut probe = |step: usize, m: &TerraceNet<f64>| -> terravec_core::Result<bool> {
        if step.is_multiple_of(25) && step >= 250 {
            probes.push((
                step,
                eval_loss(m, &data.tiles, &loss, step >= vem_start, vem_steps)?.total,
            ));
        }
        Ok(step >= 500)
    };
    let out = train_tiles::<f64>(&cfg, &tiles, &[], &mut (), Some(&mut probe)).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    if let Some(why) = out.aborted {
        return Ok(Verdict {
            pass: false,
            detail: format!("training aborted: {why}"),
        });
    }
    let best = probes
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or("no probe reached")?;
    let last = probes.last().copied().ok_or("no probe reached")?;
    Ok(Verdict {
        pass: best.1 < 0.05 && secs < 600.0,
        detail: format!(
            "lowest total {:.4} at step {}; last probe {:.4} at step {}; {secs:.0} s",
            best.1, best.0, last.1, last.0
        ),
    })
}

// 7. The 200-tile experiment.

fn experiment() -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    let data = generate_dataset(&cfg.data).map_err(err)?;
    let cell = |mode, stsro, grouping| Cell {
        mode,
        stsro,
        grouping,
    };
    let cells = [
        cell(InputMode::DualBranch, true, Grouping::B),
        cell(InputMode::RgbOnly, true, Grouping::B),
        cell(InputMode::DemOnly, true, Grouping::B),
        cell(InputMode::DualBranch, false, Grouping::B),
        cell(InputMode::DualBranch, true, Grouping::A),
    ];
    let rows = ablation_matrix::<f64>(&cfg, &data, &cells, &mut |r| {
        println!(
            "    {}/{}/{}: test miou {:.4}, oa {:.4}, {:.0} s",
            r.mode, r.stsro, r.grouping, r.miou, r.oa, r.seconds
        )
    })
    .map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let csv = report_csv(&rows).map_err(err)?;
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_ablation.csv");
    fs::write(&path, &csv).map_err(err)?;
    let m: Vec<f64> = rows.iter().map(|r| r.miou).collect();
    let (dual, rgb, dem, off, a) = (m[0], m[1], m[2], m[3], m[4]);
    let checks = [
        ("dual ≥ 0.90", dual >= 0.90),
        ("dual − rgb ≥ 0.02", dual - rgb >= 0.02),
        ("dual − dem ≥ 0.02", dual - dem >= 0.02),
        ("stsro on − off ≥ 0.005", dual - off >= 0.005),
        ("grouping b ≥ a", dual >= a),
        ("≤ 1 h", secs <= 3600.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let mut detail = format!(
        "dual {dual:.4}, rgb {rgb:.4}, dem {dem:.4}, stsro off {off:.4}, grouping a {a:.4}, {secs:.0} s; CSV {}",
        path.display()
    );
    if !failed.is_empty() {
        detail += &format!("; failed {failed:?}\n{csv}");
    }
    Ok(Verdict {
        pass: failed.is_empty(),
        detail,
    })
}

// 8. Command-line pipeline.

fn terravec(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_terravec"))
        .args(args)
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "terravec {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Closed rings of at least four positions, exterior counter-clockwise.
fn geojson_problems(text: &str) -> Vec<String> {
    let mut bad = Vec::new();
    let v: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return vec![e.to_string()],
    };
    if v["type"] != "FeatureCollection" {
        bad.push("not a FeatureCollection".into());
    }
    for f in v["features"].as_array().cloned().unwrap_or_default() {
        if f["type"] != "Feature" || f["geometry"]["type"] != "Polygon" {
            bad.push("feature is not a Polygon".into());
            continue;
        }
        for (k, ring) in f["geometry"]["coordinates"]
            .as_array()
            .cloned()
            .unwrap_or_default()
            .iter()
            .enumerate()
        {
            let pts: Vec<[f64; 2]> = ring
                .as_array()
                .cloned()
                .unwrap_or_default()
                .iter()
                .map(|p| {
                    [
                        p[0].as_f64().unwrap_or(f64::NAN),
                        p[1].as_f64().unwrap_or(f64::NAN),
                    ]
                })
                .collect();
            if pts.len() < 4
                || pts.first() != pts.last()
                || pts.iter().flatten().any(|x| !x.is_finite())
            {
                bad.push("ring not closed or too short".into());
                continue;
            }
            let area: f64 = pts
                .windows(2)
                .map(|w| w[0][0] * w[1][1] - w[1][0] * w[0][1])
                .sum::<f64>()
                / 2.0;
            if (k == 0) != (area > 0.0) {
                bad.push(format!("ring {k} has the wrong orientation"));
            }
        }
    }
    bad
}

const COMMON: [&str; 6] = [
    "--seed",
    "7",
    "--set",
    "data.tiles=20",
    "--set",
    "train.steps=40",
];

fn with(mut args: Vec<&str>) -> Vec<&str> {
    args.extend_from_slice(&COMMON);
    args
}

fn cli_pipeline() -> Outcome {
    let base = tempfile::tempdir().map_err(err)?;
    let mut runs = Vec::new();
    let mut problems = Vec::new();
    let mut polygons = 0;
    for run in ["first", "second"] {
        let root = base.path().join(run);
        let p = |s: &str| root.join(s).display().to_string();
        let (data, model, pred, vec, eval) =
            (p("data"), p("model"), p("pred"), p("vec"), p("eval"));
        terravec(&with(vec!["synth", "--out", &data]))?;
        terravec(&with(vec!["train", "--data", &data, "--out", &model]))?;
        let ckpt = p("model/model.ckpt");
        terravec(&with(vec![
            "infer",
            "--checkpoint",
            &ckpt,
            "--data",
            &data,
            "--out",
            &pred,
        ]))?;
        let manifest: Value =
            serde_json::from_slice(&fs::read(root.join("data/manifest.json")).map_err(err)?)
                .map_err(err)?;
        let first_test = manifest["tiles"]
            .as_array()
            .and_then(|t| t.iter().find(|e| e["split"] == "test"))
            .and_then(|e| e["id"].as_str())
            .ok_or("no test tile")?
            .to_string();
        let mask = p(&format!("pred/{first_test}_mask.pgm"));
        terravec(&with(vec![
            "vectorize",
            "--checkpoint",
            &ckpt,
            "--data",
            &data,
            "--tile",
            &first_test,
            "--out",
            &vec,
        ]))?;
        terravec(&with(vec!["vectorize", "--mask", &mask, "--out", &vec]))?;
        terravec(&with(vec![
            "eval",
            "--checkpoint",
            &ckpt,
            "--data",
            &data,
            "--polygons",
            "--out",
            &eval,
        ]))?;
        for (name, bytes) in tree(&root.join("vec")) {
            if name.ends_with(".geojson") {
                let text = String::from_utf8_lossy(&bytes);
                problems.extend(
                    geojson_problems(&text)
                        .into_iter()
                        .map(|m| format!("{name}: {m}")),
                );
                polygons += serde_json::from_str::<Value>(&text).map_err(err)?["features"]
                    .as_array()
                    .map_or(0, |f| f.len());
            }
        }
        runs.push(tree(&root));
    }
    let identical = runs[0] == runs[1];
    let files = runs[0].len();
    Ok(Verdict {
        pass: identical && problems.is_empty() && files > 0,
        detail: format!(
            "{files} files per run, reruns {}; {} polygons checked{}",
            if identical {
                "byte-identical"
            } else {
                "DIFFER"
            },
            polygons,
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems {problems:?}")
            }
        ),
    })
}

fn main() {
    let strict = env::var_os("ACCEPTANCE_STRICT").is_some();
    let only: Option<Vec<usize>> = env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "gradient suite", gradient_suite),
        (2, "structural invariants", structural),
        (3, "loss oracles", loss_oracles),
        (4, "contour dynamics", vem_dynamics),
        (5, "disk vectorization", disk_vectorization),
        (6, "overfit four tiles", overfit),
        (7, "200-tile experiment", experiment),
        (8, "CLI pipeline", cli_pipeline),
    ];
    let (mut failed, mut broken) = (0, 0);
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(v) => {
                failed += usize::from(!v.pass);
                println!(
                    "criterion {n} {name}: {} ({}) [{secs:.1} s]",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.detail
                );
            }
            Err(e) => {
                broken += 1;
                println!("criterion {n} {name}: FAIL (could not evaluate: {e}) [{secs:.1} s]");
            }
        }
    }
    if broken > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
