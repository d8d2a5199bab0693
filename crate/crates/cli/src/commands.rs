use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use wdn::gradcheck::{run_suite, GradCheckOptions};
use wdn::imaging::{read_png, rgb_to_ycbcr, upscale, write_gray_png, write_png, ycbcr_to_rgb, ImagePlane, YCbCr};
use wdn::metrics::{eval_protocol, EvalReport};
use wdn::model::{TrainingProcedure, WdnConfig, WdnModel};
use wdn::training::checkpoint::{self, Progress};
use wdn::training::data::png_files;
use wdn::training::{
    build_subproblems, degrade as degrade_image, train_procedure_variant, train_stage, Dataset, LogRow,
};

use crate::config::{resolve_map, RunConfig};
use crate::exit::{self, Failure};

fn runtime(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> Failure {
    move |e| Failure::new(exit::RUNTIME, format!("{context}: {e}"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(runtime(format!("cannot write {}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(runtime(format!("cannot create {}", dir.display())))
}

/// Prints the resolved invocation so every run is reproducible from its log.
fn echo(value: &Value) {
    eprintln!("{value}");
}

fn check_scale(scale: usize) -> Result<(), Failure> {
    if (2..=4).contains(&scale) {
        Ok(())
    } else {
        Err(Failure::config(format!("scale must be 2, 3 or 4, got {scale}")))
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Sizes the global thread pool; 0 keeps the default (one per core).
pub fn init_workers(workers: usize) -> Result<(), Failure> {
    if workers == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Failure::new(exit::RUNTIME, format!("cannot start {workers} workers: {e}")))
}

fn pngs_or_empty(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(Failure::new(
            exit::EMPTY_INPUT,
            format!("no PNG images found in {}", dir.display()),
        ));
    }
    Ok(files)
}

pub fn degrade(input: &Path, out: &Path, scale: usize) -> Result<(), Failure> {
    check_scale(scale)?;
    let run = json!({"command": "degrade", "in": input, "out": out, "scale": scale});
    echo(&run);
    let files = pngs_or_empty(input)?;
    create_dir(out)?;
    write_json(&out.join("run.json"), &run)?;
    let mut written = 0;
    for path in &files {
        let result = read_png(path)
            .and_then(|img| degrade_image(&img, scale))
            .and_then(|lr| write_png(&lr, out.join(file_name(path))));
        match result {
            Ok(()) => written += 1,
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    if written == 0 {
        return Err(Failure::new(
            exit::ALL_FAILED,
            format!(
                "none of the {} images in {} could be degraded",
                files.len(),
                input.display()
            ),
        ));
    }
    println!("{written} of {} images written to {}", files.len(), out.display());
    Ok(())
}

/// How an exported plane maps back to its values: `v = stored * scale + offset`.
fn encoding(name: &str) -> (f64, f64) {
    if name.contains("_lf") {
        (2.0, -1.0)
    } else {
        (1.0, 0.0)
    }
}

pub fn decompose(input: &Path, out: &Path, scale: usize) -> Result<(), Failure> {
    check_scale(scale)?;
    let run = json!({"command": "decompose", "in": input, "out": out, "scale": scale});
    echo(&run);
    let hr = rgb_to_ycbcr(&read_png(input)?).y;
    let config = WdnConfig {
        scale,
        ..WdnConfig::desk()
    };
    let sets = build_subproblems(&hr, &config)?;
    create_dir(out)?;
    let mut planes: Vec<(String, &ImagePlane)> = Vec::new();
    let half1 = sets.set1.len() / 2;
    for (i, p) in sets.set1.iter().enumerate() {
        let band = if i < half1 { "hf" } else { "lf" };
        planes.push((format!("set1_{band}_{}", i % half1.max(1)), p));
    }
    planes.push(("set2_hf".into(), &sets.set2[0]));
    planes.push(("set2_lf".into(), &sets.set2[1]));
    planes.push(("set3".into(), &sets.set3));
    let half = sets.inputs.len() / 2;
    for (i, p) in sets.inputs.iter().enumerate() {
        let band = if i < half { "hf" } else { "lf" };
        planes.push((format!("input_{band}_{:02}", i % half), p));
    }
    let mut files = Vec::new();
    for (name, plane) in planes {
        let (s, o) = encoding(&name);
        let file = format!("{name}.png");
        write_gray_png(&plane.map(|v| (v - o) / s), out.join(&file))?;
        files.push(json!({"file": file, "scale": s, "offset": o}));
    }
    write_json(&out.join("run.json"), &run)?;
    write_json(&out.join("decompose.json"), &json!({"scale": scale, "files": files}))?;
    println!("{} planes written to {}", files.len(), out.display());
    Ok(())
}

pub struct TrainArgs {
    pub stage: Option<u8>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub resume: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn require_path(value: Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    value.ok_or_else(|| Failure::config(format!("{what} is not set")))
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let map = resolve_map(args.config.as_deref(), &args.overrides)?;
    let mut cfg = RunConfig::from_map(&map)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(out) = &args.out {
        cfg.checkpoint = Some(out.clone());
    }
    let out = require_path(
        cfg.checkpoint.clone(),
        "the output directory (--out or output.checkpoint)",
    )?;
    let train_dir = require_path(cfg.train_dir.clone(), "the training directory (data.train_dir)")?;
    let resolved = Value::Object(cfg.to_map());
    echo(&json!({"command": "train", "stage": args.stage, "resume": args.resume, "config": resolved}));
    init_workers(cfg.workers)?;

    let (mut model, mut progress) = match &args.resume {
        Some(dir) => {
            let (model, manifest) = checkpoint::load::<f32>(dir)?;
            if manifest.config.scale != cfg.model.scale {
                return Err(Failure::new(
                    exit::SCALE_MISMATCH,
                    format!(
                        "checkpoint {} is for scale {}, config asks for {}",
                        dir.display(),
                        manifest.config.scale,
                        cfg.model.scale
                    ),
                ));
            }
            if manifest.config != cfg.model {
                return Err(Failure::config(format!(
                    "checkpoint {} was built with a different model.* configuration",
                    dir.display()
                )));
            }
            (model, manifest.progress)
        }
        None => (WdnModel::<f32>::new(cfg.model.clone(), cfg.seed)?, Progress::default()),
    };

    pngs_or_empty(&train_dir)?;
    if let Some(v) = &cfg.val_dir {
        pngs_or_empty(v)?;
    }
    let dataset = Dataset::from_dirs(&train_dir, cfg.val_dir.as_deref())?;

    create_dir(&out)?;
    write_json(&out.join("config.json"), &resolved)?;
    let log_path = out.join("train_log.jsonl");
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(runtime(format!("cannot open {}", log_path.display())))?;
    let mut log = |row: &LogRow| -> wdn::Result<()> {
        let line = serde_json::to_string(row).expect("log rows serialize");
        writeln!(log_file, "{line}")
            .map_err(|e| wdn::Error::Config(format!("cannot append to the training log: {e}")))?;
        eprintln!(
            "stage {} epoch {} step {} val_psnr {:.4}",
            row.stage, row.epoch, row.step, row.val_psnr
        );
        Ok(())
    };

    let procedure = cfg.model.training_procedure;
    let report = if procedure == TrainingProcedure::Stagewise {
        let stage = args
            .stage
            .ok_or_else(|| Failure::config("--stage is required for the stagewise procedure"))?;
        train_stage(&mut model, stage, &dataset, &cfg.train, &mut progress, &mut log)?
    } else {
        train_procedure_variant(&mut model, procedure, &dataset, &cfg.train, &mut progress, &mut log)?
    };
    checkpoint::save(&model, &progress, &out)?;
    println!(
        "{}",
        json!({
            "stage": args.stage,
            "epochs": report.epochs,
            "best_val_psnr": report.best_val_psnr,
            "early_stopped": report.early_stopped,
            "checkpoint": out,
        })
    );
    Ok(())
}

fn require_trained(model: &WdnModel<f32>, ckpt: &Path) -> Result<(), Failure> {
    let first = if model.config.scale_division { 1 } else { 2 };
    for stage in first..=3u8 {
        if !model.trained[stage as usize - 1] {
            return Err(Failure::new(
                exit::MISSING_STAGE,
                format!("checkpoint {} has no trained stage {stage}", ckpt.display()),
            ));
        }
    }
    Ok(())
}

pub fn upsample(input: &Path, ckpt: &Path, scale: usize, out: &Path) -> Result<(), Failure> {
    echo(&json!({"command": "upsample", "in": input, "ckpt": ckpt, "scale": scale, "out": out}));
    let (model, _) = checkpoint::load::<f32>(ckpt)?;
    if model.config.scale != scale {
        return Err(Failure::new(
            exit::SCALE_MISMATCH,
            format!(
                "checkpoint {} upsamples by {}, not {scale}",
                ckpt.display(),
                model.config.scale
            ),
        ));
    }
    require_trained(&model, ckpt)?;
    let lr = rgb_to_ycbcr(&read_png(input)?);
    let y = model.upsample_luma(&lr.y)?;
    let hr = YCbCr {
        y,
        cb: upscale(&lr.cb, scale)?,
        cr: upscale(&lr.cr, scale)?,
    };
    write_png(&ycbcr_to_rgb(&hr)?, out)?;
    Ok(())
}

pub fn eval(pred: &Path, gt: &Path, scale: usize, report_path: &Path) -> Result<(), Failure> {
    check_scale(scale)?;
    echo(&json!({"command": "eval", "pred": pred, "gt": gt, "scale": scale, "report": report_path}));
    let files = pngs_or_empty(gt)?;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for gt_path in &files {
        let name = file_name(gt_path);
        let pred_path = pred.join(&name);
        if !pred_path.is_file() {
            eprintln!("warning: no prediction for {name}");
            skipped.push(name);
            continue;
        }
        let entry = read_png(&pred_path)
            .and_then(|p| read_png(gt_path).map(|g| (p, g)))
            .and_then(|(p, g)| eval_protocol(&name, &p, &g, scale));
        match entry {
            Ok(e) => entries.push(e),
            Err(e) => {
                eprintln!("warning: skipping {name}: {e}");
                skipped.push(name);
            }
        }
    }
    let report = EvalReport::new(scale, entries, skipped);
    write_json(report_path, &report)?;
    println!(
        "{} images, mean PSNR {:.4} dB, mean SSIM {:.4}",
        report.images.len(),
        report.mean_psnr,
        report.mean_ssim
    );
    if !report.skipped.is_empty() {
        return Err(Failure::new(
            exit::SKIPPED,
            format!(
                "{} image(s) skipped: {}",
                report.skipped.len(),
                report.skipped.join(", ")
            ),
        ));
    }
    Ok(())
}

pub fn gradcheck(seed: u64, perturb: Option<f64>) -> Result<(), Failure> {
    echo(&json!({"command": "gradcheck", "seed": seed, "perturb": perturb}));
    let opts = GradCheckOptions {
        seed,
        perturb,
        ..Default::default()
    };
    let results = run_suite(&opts)?;
    let mut failed = Vec::new();
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<18} max_rel_error {:.3e}  threshold {:.0e}  checked {:>4}  {verdict}",
            r.op, r.max_rel_error, r.threshold, r.checked
        );
        if !r.passed() {
            failed.push(r.op.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            exit::GRADCHECK,
            format!("gradient check failed for {}", failed.join(", ")),
        ))
    }
}
