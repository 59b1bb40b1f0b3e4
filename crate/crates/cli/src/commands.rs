use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use terravec_core::checkpoint::{self, CheckpointMeta};
use terravec_core::dataforge::{
    generate_dataset, mask_pgm, png_bytes, prepare_cross_scale, read_dataset, read_manifest,
    read_mask, read_tile, unit_pgm16, write_atomic, write_dataset, DualModalTile, Grouping,
    Manifest, ManifestEntry,
};
use terravec_core::gradcheck::{corrupted_case, run_cases, run_suite, OpReport, REL_TOL};
use terravec_core::model::{Prediction, TerraceNet};
use terravec_core::omega::InputMode;
use terravec_core::trainer::{
    ablation_matrix, all_cells, evaluate, log_csv, report_csv, report_row, train, Cell,
    ExperimentConfig, LogRow, Progress, ReportRow, ValRow,
};
use terravec_core::vem::{emit_polygons, mask_contours, render_overlay, GeoTransform};
use terravec_core::Error;

use crate::config::{echo, resolve, Overrides};
use crate::{Cli, Command, Failure};

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    let o = Overrides {
        config: cli.config.clone(),
        set: cli.set.clone(),
        seed: cli.seed,
        grouping: cli.grouping,
        input_mode: cli.input_mode,
        no_stsro: cli.no_stsro,
    };
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth => synth(&o, out),
        Command::Train { data } => train_cmd(&o, out, &data),
        Command::Eval {
            checkpoint,
            data,
            split,
            polygons,
        } => eval(&o, out, &checkpoint, &data, &split, polygons),
        Command::Infer {
            checkpoint,
            data,
            tiles,
            split,
        } => infer(&o, out, &checkpoint, &data, &tiles, &split),
        Command::Vectorize {
            mask,
            checkpoint,
            data,
            tile,
            simplify,
            steps,
            scale,
            georef,
        } => {
            let cfg = resolve(&o)?;
            echo(out, "vectorize", &cfg)?;
            let opts = VectorOpts {
                simplify,
                steps,
                scale,
                georef,
            };
            match (mask, checkpoint, data, tile) {
                (Some(m), _, _, _) => vectorize_mask(out, &m, &opts),
                (None, Some(c), Some(d), Some(t)) => vectorize_tile(&o, out, &c, &d, &t, &opts),
                _ => Err(Failure::Usage(
                    "vectorize needs --mask, or --checkpoint with --data and --tile".into(),
                )),
            }
        }
        Command::Ablate { data, cells } => ablate(&o, out, &data, &cells),
        Command::Gradcheck {
            cases,
            filter,
            inject_fault,
        } => gradcheck(&o, out, cases, filter.as_deref(), inject_fault),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    write_atomic(path, bytes)?;
    Ok(())
}

fn synth(o: &Overrides, out: &Path) -> Outcome {
    let cfg = resolve(o)?;
    let data = generate_dataset(&cfg.data)?;
    let manifest = write_dataset(out, &cfg.data, &data)?;
    echo(out, "synth", &cfg)?;
    println!(
        "wrote {} tiles ({} train, {} val, {} test) to {}",
        data.tiles.len(),
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len(),
        manifest.display()
    );
    Ok(())
}

/// Prints training progress to stderr about twenty times per run.
struct Console {
    every: usize,
}

impl Progress for Console {
    fn step(&mut self, r: &LogRow) {
        if r.step.is_multiple_of(self.every) {
            eprintln!(
                "step {:>5}  lr {:.2e}  total {:.4}  (bce {:.4}, lovasz {:.4}, chamfer {:.4}, aux {:.4})  |g| {:.3}",
                r.step, r.lr, r.total, r.l1, r.l2, r.l3, r.aux, r.grad_norm
            );
        }
    }
    fn validation(&mut self, r: &ValRow) {
        eprintln!("val   {:>5}  miou {:.4}  oa {:.4}", r.step, r.miou, r.oa);
    }
}

fn train_cmd(o: &Overrides, out: &Path, data_dir: &Path) -> Outcome {
    let mut cfg = resolve(o)?;
    let (manifest, data) = read_dataset(data_dir)?;
    // The dataset defines the data section.
    cfg.data = manifest.config;
    cfg.validate()?;
    echo(out, "train", &cfg)?;
    let mut console = Console {
        every: (cfg.train.steps / 20).max(1),
    };
    let run = train::<f64>(&cfg, &data, &mut console)?;
    checkpoint::save(&out.join("model.ckpt"), &run.model, &run.meta)?;
    write(&out.join("train_log.csv"), log_csv(&run.log)?.as_bytes())?;
    write(&out.join("val_log.csv"), log_csv(&run.val)?.as_bytes())?;
    if let Some(why) = run.aborted {
        return Err(Failure::Runtime(format!(
            "training aborted: {why}; last finite weights saved"
        )));
    }
    match run.val.iter().find(|v| v.step == run.meta.step) {
        Some(v) => println!(
            "trained {} steps; kept step {} (val miou {:.4}, oa {:.4})",
            run.log.len(),
            v.step,
            v.miou,
            v.oa
        ),
        None => println!("trained {} steps", run.log.len()),
    }
    Ok(())
}

/// Loads a checkpoint and rejects shortcut flags that contradict it.
fn load_model(o: &Overrides, path: &Path) -> Result<(TerraceNet<f64>, CheckpointMeta), Failure> {
    let (model, meta) = checkpoint::load::<f64>(path)?;
    let clash = |what: &str, flag: String, stored: String| {
        Failure::Usage(format!(
            "--{what} {flag} contradicts the checkpoint ({stored})"
        ))
    };
    if let Some(g) = o.grouping.filter(|g| *g != meta.grouping) {
        return Err(clash("grouping", g.to_string(), meta.grouping.to_string()));
    }
    if let Some(m) = o.input_mode.filter(|m| *m != meta.network.input_mode) {
        return Err(clash(
            "input-mode",
            m.to_string(),
            meta.network.input_mode.to_string(),
        ));
    }
    if o.no_stsro && meta.network.stsro_enabled {
        return Err(clash(
            "no-stsro",
            String::new(),
            "trained with refinement".into(),
        ));
    }
    Ok((model, meta))
}

/// Configuration echo for commands that run a stored model.
fn model_config(
    o: &Overrides,
    meta: &CheckpointMeta,
    manifest: &Manifest,
) -> Result<ExperimentConfig, Failure> {
    let mut cfg = resolve(o)?;
    cfg.data = manifest.config.clone();
    cfg.network = meta.network.clone();
    cfg.train.grouping = meta.grouping;
    Ok(cfg)
}

fn select<'a>(m: &'a Manifest, split: &str) -> Result<Vec<&'a ManifestEntry>, Failure> {
    if !["train", "val", "test", "all"].contains(&split) {
        return Err(Failure::Usage(format!(
            "unknown split '{split}' (expected train, val, test or all)"
        )));
    }
    Ok(m.tiles
        .iter()
        .filter(|e| split == "all" || e.split == split)
        .collect())
}

/// Prediction at label resolution for a native tile; returns the label
/// size and ground sample distance alongside.
fn predict(
    model: &TerraceNet<f64>,
    meta: &CheckpointMeta,
    tile: &DualModalTile,
) -> Result<(Prediction<f64>, usize, f64), Failure> {
    if tile.rgb.size != meta.native_size {
        return Err(Failure::Usage(format!(
            "tile is {} px but the checkpoint expects {} px",
            tile.rgb.size, meta.native_size
        )));
    }
    let t = prepare_cross_scale(tile, meta.grouping)?;
    let l = t.label.size;
    let pred = model.forward(&t.net_input(model.cfg().input_size)?, l, None)?;
    Ok((pred, l, t.gsd_label))
}

fn eval(
    o: &Overrides,
    out: &Path,
    ckpt: &Path,
    data_dir: &Path,
    split: &str,
    polygons: bool,
) -> Outcome {
    let (model, meta) = load_model(o, ckpt)?;
    let manifest = read_manifest(data_dir)?;
    let cfg = model_config(o, &meta, &manifest)?;
    let entries = select(&manifest, split)?;
    let tiles = entries
        .iter()
        .map(|e| read_tile(data_dir, e))
        .collect::<Result<Vec<_>, Error>>()?;
    let refs: Vec<&DualModalTile> = tiles.iter().collect();
    let ev = evaluate(&model, &refs, meta.grouping, polygons)?;
    let mut row = report_row(&model, meta.grouping, &ev, tiles.len());
    row.train_steps = meta.step;
    echo(out, "eval", &cfg)?;
    write(
        &out.join("report.csv"),
        report_csv(&[row.clone()])?.as_bytes(),
    )?;
    print!(
        "{split}: {} tiles, miou {:.4}, oa {:.4}",
        row.tiles, row.miou, row.oa
    );
    match row.chamfer {
        Some(c) => println!(", chamfer {c:.3} px"),
        None => println!(),
    }
    Ok(())
}

fn infer(
    o: &Overrides,
    out: &Path,
    ckpt: &Path,
    data_dir: &Path,
    ids: &[String],
    split: &str,
) -> Outcome {
    let (model, meta) = load_model(o, ckpt)?;
    let manifest = read_manifest(data_dir)?;
    let cfg = model_config(o, &meta, &manifest)?;
    echo(out, "infer", &cfg)?;
    let wanted: Vec<String> = if ids.is_empty() {
        select(&manifest, split)?
            .iter()
            .map(|e| e.id.clone())
            .collect()
    } else {
        ids.to_vec()
    };
    let mut skipped = Vec::new();
    for id in &wanted {
        let Some(entry) = manifest.tiles.iter().find(|e| &e.id == id) else {
            eprintln!("skipped {id}: not in the manifest");
            skipped.push(id.clone());
            continue;
        };
        let tile = match read_tile(data_dir, entry) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("skipped {id}: {e}");
                skipped.push(id.clone());
                continue;
            }
        };
        let (pred, l, _) = predict(&model, &meta, &tile)?;
        write(
            &out.join(format!("{id}_mask.pgm")),
            &mask_pgm(&pred.mask(), l)?,
        )?;
        write(
            &out.join(format!("{id}_prob.pgm")),
            &unit_pgm16(&pred.probability(), l)?,
        )?;
    }
    println!(
        "wrote {} of {} tiles to {}",
        wanted.len() - skipped.len(),
        wanted.len(),
        out.display()
    );
    if skipped.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "skipped tiles: {}",
            skipped.join(", ")
        )))
    }
}

struct VectorOpts {
    simplify: f64,
    steps: usize,
    scale: u32,
    georef: bool,
}

fn write_vectors(
    out: &Path,
    name: &str,
    mask: &[bool],
    (h, w): (usize, usize),
    rings: &[Vec<[f64; 2]>],
    transform: Option<GeoTransform>,
    opts: &VectorOpts,
) -> Outcome {
    if !(opts.simplify >= 0.0) {
        return Err(Failure::Usage(format!(
            "--simplify must be nonnegative, got {}",
            opts.simplify
        )));
    }
    let set = emit_polygons(rings, opts.simplify, transform);
    write(
        &out.join(format!("{name}.geojson")),
        set.to_geojson_string().as_bytes(),
    )?;
    write(
        &out.join(format!("{name}_overlay.png")),
        &png_bytes(&render_overlay(mask, h, w, rings, opts.scale))?,
    )?;
    println!("{name}: {} polygons", set.len());
    Ok(())
}

fn vectorize_mask(out: &Path, path: &Path, opts: &VectorOpts) -> Outcome {
    let (mask, h, w) = read_mask(path)?;
    let contours = mask_contours(&mask, h, w, opts.steps)?;
    let rings: Vec<Vec<[f64; 2]>> = contours.iter().map(|c| c.vertices()).collect();
    let name = path
        .file_stem()
        .map_or("mask".into(), |s| s.to_string_lossy().into_owned());
    write_vectors(out, &name, &mask, (h, w), &rings, None, opts)
}

fn vectorize_tile(
    o: &Overrides,
    out: &Path,
    ckpt: &Path,
    data_dir: &Path,
    id: &str,
    opts: &VectorOpts,
) -> Outcome {
    let (model, meta) = load_model(o, ckpt)?;
    let manifest = read_manifest(data_dir)?;
    let entry = manifest
        .tiles
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Failure::Runtime(format!("tile {id} is not in the manifest")))?;
    let tile = read_tile(data_dir, entry)?;
    let (pred, l, gsd) = predict(&model, &meta, &tile)?;
    let contours = model.contours(&pred, opts.steps)?;
    let rings: Vec<Vec<[f64; 2]>> = contours.iter().map(|c| c.vertices()).collect();
    let transform = opts.georef.then(|| GeoTransform::north_up(0.0, 0.0, gsd));
    write_vectors(out, id, &pred.mask(), (l, l), &rings, transform, opts)
}

fn parse_cell(s: &str) -> Result<Cell, Failure> {
    let bad = || {
        Failure::Usage(format!(
            "cell '{s}' is not mode/stsro/grouping, e.g. dual/on/b"
        ))
    };
    let parts: Vec<&str> = s.split('/').collect();
    let [mode, stsro, grouping] = parts[..] else {
        return Err(bad());
    };
    let stsro = match stsro {
        "on" | "true" => true,
        "off" | "false" => false,
        _ => return Err(bad()),
    };
    Ok(Cell {
        mode: InputMode::from_str(mode)?,
        stsro,
        grouping: Grouping::from_str(grouping)?,
    })
}

fn ablate(o: &Overrides, out: &Path, data_dir: &Path, cells: &[String]) -> Outcome {
    let mut cfg = resolve(o)?;
    let cells = if cells.is_empty() {
        all_cells()
    } else {
        cells
            .iter()
            .map(|c| parse_cell(c))
            .collect::<Result<_, _>>()?
    };
    let (manifest, data) = read_dataset(data_dir)?;
    cfg.data = manifest.config;
    cfg.validate()?;
    echo(out, "ablate", &cfg)?;
    let path = out.join("ablation.csv");
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut io_error = None;
    let result = ablation_matrix::<f64>(&cfg, &data, &cells, &mut |r| {
        println!(
            "{}/{}/{}: miou {:.4}, oa {:.4} ({:.0} s)",
            r.mode, r.stsro, r.grouping, r.miou, r.oa, r.seconds
        );
        rows.push(r.clone());
        // Rewritten after every cell so a failure later keeps the rows so far.
        if let Err(e) = report_csv(&rows).and_then(|t| write_atomic(&path, t.as_bytes())) {
            io_error.get_or_insert(e);
        }
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    result?;
    Ok(())
}

fn gradcheck(
    o: &Overrides,
    out: &Path,
    cases: usize,
    filter: Option<&str>,
    inject_fault: bool,
) -> Outcome {
    let cfg = resolve(o)?;
    if cases == 0 {
        return Err(Failure::Usage("--cases must be positive".into()));
    }
    echo(out, "gradcheck", &cfg)?;
    let mut reports: Vec<OpReport> = run_suite(cases, filter);
    if inject_fault {
        let c = corrupted_case();
        reports.push(run_cases(&format!("{}/{}", c.group, c.op), cases, c.case));
    }
    let mut csv = String::from("op,cases,max_rel_err,passed,failure\n");
    for r in &reports {
        let failure = r.failure.as_deref().unwrap_or("").replace(['"', ','], " ");
        let _ = writeln!(
            csv,
            "{},{},{:e},{},{}",
            r.op,
            r.cases,
            r.max_rel_err,
            r.passed(),
            failure
        );
        println!(
            "{:<6} {:<45} cases {:>3}  max rel err {:.3e}{}",
            if r.passed() { "ok" } else { "FAIL" },
            r.op,
            r.cases,
            r.max_rel_err,
            r.failure
                .as_deref()
                .map(|f| format!("  ({f})"))
                .unwrap_or_default()
        );
    }
    write(&out.join("gradcheck.csv"), csv.as_bytes())?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if reports.is_empty() {
        return Err(Failure::Usage(format!(
            "no operation matches filter {:?}",
            filter.unwrap_or("")
        )));
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!(
            "{failed} of {} operations exceed relative error {REL_TOL:e}",
            reports.len()
        )));
    }
    println!(
        "all {} operations within relative error {REL_TOL:e}",
        reports.len()
    );
    Ok(())
}
