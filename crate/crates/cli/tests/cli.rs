use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use wdn::imaging::{read_png, write_png, ColorImage, ImagePlane};
use wdn::Rng;

fn wdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn textured(h: usize, w: usize, seed: u64) -> ImagePlane {
    let mut rng = Rng::new(seed);
    let (fx, fy) = (rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5));
    ImagePlane::from_fn(h, w, |y, x| {
        (0.5 + 0.3 * (x as f64 * fx).sin() * (y as f64 * fy).cos() + rng.uniform(-0.05, 0.05)).clamp(0.0, 1.0)
    })
}

fn colour(h: usize, w: usize, seed: u64) -> ColorImage {
    ColorImage::new(textured(h, w, seed), textured(h, w, seed + 1), textured(h, w, seed + 2)).unwrap()
}

fn write_set(dir: &Path, n: usize, size: usize) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let p = dir.join(format!("img{i}.png"));
            write_png(&colour(size, size, 10 * i as u64), &p).unwrap();
            p
        })
        .collect()
}

#[test]
fn degrade_shapes_empty_dir_and_idempotence() {
    let tmp = TempDir::new().unwrap();
    let hr = tmp.path().join("hr");
    write_set(&hr, 2, 96);
    let lr = tmp.path().join("lr");
    let out = wdn(&["degrade", "--in", s(&hr), "--out", s(&lr), "--scale", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let img = read_png(lr.join("img0.png")).unwrap();
    assert_eq!(img.dims(), (24, 24));
    let first = std::fs::read(lr.join("img1.png")).unwrap();
    assert_eq!(
        code(&wdn(&["degrade", "--in", s(&hr), "--out", s(&lr), "--scale", "4"])),
        0
    );
    assert_eq!(std::fs::read(lr.join("img1.png")).unwrap(), first);
    assert!(lr.join("run.json").is_file());

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = wdn(&["degrade", "--in", s(&empty), "--out", s(&lr), "--scale", "4"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no PNG"));
}

#[test]
fn degrade_all_unreadable_fails() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("bad");
    std::fs::create_dir(&dir).unwrap();
    std::fs::write(dir.join("broken.png"), b"not a png").unwrap();
    let out = wdn(&[
        "degrade",
        "--in",
        s(&dir),
        "--out",
        s(&tmp.path().join("o")),
        "--scale",
        "2",
    ]);
    assert_eq!(code(&out), 7);
}

fn decode(dir: &Path, file: &str, manifest: &Value) -> ImagePlane {
    let entry = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["file"] == file)
        .unwrap();
    let (scale, offset) = (entry["scale"].as_f64().unwrap(), entry["offset"].as_f64().unwrap());
    read_png(dir.join(file)).unwrap().planes()[0].map(|v| v * scale + offset)
}

#[test]
fn decompose_exports_43_planes_that_recombine() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("hr.png");
    write_png(&ColorImage::gray(textured(48, 64, 3)), &img).unwrap();
    let out_dir = tmp.path().join("parts");
    let out = wdn(&["decompose", "--in", s(&img), "--out", s(&out_dir), "--scale", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pngs = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 43);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("decompose.json")).unwrap()).unwrap();
    let hf = decode(&out_dir, "set2_hf.png", &manifest);
    let lf = decode(&out_dir, "set2_lf.png", &manifest);
    let hr = decode(&out_dir, "set3.png", &manifest);
    let sum = hf.add(&lf).unwrap();
    assert!(
        sum.max_abs_diff(&hr) <= 2.0 / 255.0 + 1e-12,
        "{}",
        sum.max_abs_diff(&hr)
    );
}

#[test]
fn decompose_constant_image_has_black_high_frequency() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("flat.png");
    write_png(&ColorImage::gray(ImagePlane::filled(32, 32, 0.4)), &img).unwrap();
    let out_dir = tmp.path().join("parts");
    assert_eq!(code(&wdn(&["decompose", "--in", s(&img), "--out", s(&out_dir)])), 0);
    for entry in std::fs::read_dir(&out_dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.contains("_hf") {
            let plane = read_png(&path).unwrap();
            assert!(plane.planes()[0].values().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn decompose_rejects_indivisible_sizes() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("odd.png");
    write_png(&ColorImage::gray(textured(30, 32, 1)), &img).unwrap();
    let out = wdn(&["decompose", "--in", s(&img), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(code(&out), 8);
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible by 4"));
}

#[test]
fn eval_identity_and_missing_files() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt");
    write_set(&gt, 2, 40);
    let report = tmp.path().join("report.json");
    let out = wdn(&[
        "eval",
        "--pred",
        s(&gt),
        "--gt",
        s(&gt),
        "--scale",
        "4",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["mean_ssim"].as_f64().unwrap(), 1.0);
    assert_eq!(r["images"].as_array().unwrap().len(), 2);

    let pred = tmp.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    std::fs::copy(gt.join("img0.png"), pred.join("img0.png")).unwrap();
    let out = wdn(&[
        "eval",
        "--pred",
        s(&pred),
        "--gt",
        s(&gt),
        "--scale",
        "4",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 6);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["skipped"], serde_json::json!(["img1.png"]));
}

#[test]
fn train_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model.scale": 4, "train.learning_rate": 0.1}"#).unwrap();
    let out = wdn(&[
        "train",
        "--stage",
        "1",
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("ck")),
    ]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.learning_rate"));
    let out = wdn(&["train", "--stage", "1", "--set", "model.bogus=1"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.bogus"));
}

fn log_rows(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_resume_upsample_pipeline() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("train");
    write_set(&data, 2, 48);
    let ck = tmp.path().join("ck");
    let base = [
        "--set",
        "train.patch_size=32",
        "--set",
        "train.batch_size=2",
        "--set",
        "train.max_epochs=2",
        "--set",
        "seed=5",
        "--set",
    ];
    let data_key = format!("data.train_dir={}", s(&data));
    let train = |stage: &str, resume: Option<&Path>| {
        let mut args = vec!["train", "--stage", stage, "--out", s(&ck)];
        args.extend(base);
        args.push(&data_key);
        if let Some(r) = resume {
            args.extend(["--resume", s(r)]);
        }
        wdn(&args)
    };

    let out = train("2", None);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    let out = train("1", None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ck.join("manifest.json").is_file());
    let config: Value = serde_json::from_str(&std::fs::read_to_string(ck.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 5);
    assert_eq!(config["train.patch_size"], 32);
    let rows = log_rows(&ck);
    assert_eq!(rows.len(), 2);

    let out = train("1", Some(&ck));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = log_rows(&ck);
    let steps: Vec<u64> = rows.iter().map(|r| r["step"].as_u64().unwrap()).collect();
    let epochs: Vec<u64> = rows.iter().map(|r| r["epoch"].as_u64().unwrap()).collect();
    assert_eq!(steps, vec![1, 2, 3, 4]);
    assert_eq!(epochs, vec![1, 2, 3, 4]);

    let lr = tmp.path().join("lr.png");
    write_png(&colour(12, 16, 99), &lr).unwrap();
    let sr = tmp.path().join("sr.png");
    let out = wdn(&[
        "upsample",
        "--in",
        s(&lr),
        "--ckpt",
        s(&ck),
        "--scale",
        "4",
        "--out",
        s(&sr),
    ]);
    assert_eq!(code(&out), 3, "stage 2 and 3 are still untrained");

    assert_eq!(code(&train("2", Some(&ck))), 0);
    assert_eq!(code(&train("3", Some(&ck))), 0);

    let out = wdn(&[
        "upsample",
        "--in",
        s(&lr),
        "--ckpt",
        s(&ck),
        "--scale",
        "4",
        "--out",
        s(&sr),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_png(&sr).unwrap().dims(), (48, 64));
    let first = std::fs::read(&sr).unwrap();
    assert_eq!(
        code(&wdn(&[
            "upsample",
            "--in",
            s(&lr),
            "--ckpt",
            s(&ck),
            "--scale",
            "4",
            "--out",
            s(&sr)
        ])),
        0
    );
    assert_eq!(std::fs::read(&sr).unwrap(), first);

    let out = wdn(&[
        "upsample",
        "--in",
        s(&lr),
        "--ckpt",
        s(&ck),
        "--scale",
        "2",
        "--out",
        s(&sr),
    ]);
    assert_eq!(code(&out), 5);

    let gray = tmp.path().join("gray.png");
    write_png(&ColorImage::gray(textured(12, 12, 4)), &gray).unwrap();
    let gray_sr = tmp.path().join("gray_sr.png");
    let out = wdn(&[
        "upsample",
        "--in",
        s(&gray),
        "--ckpt",
        s(&ck),
        "--scale",
        "4",
        "--out",
        s(&gray_sr),
    ]);
    assert_eq!(code(&out), 0);
    let img = read_png(&gray_sr).unwrap();
    let [r, g, b] = img.planes();
    assert!(r.max_abs_diff(g) <= 1.0 / 255.0 + 1e-12 && r.max_abs_diff(b) <= 1.0 / 255.0 + 1e-12);
}

#[test]
fn gradcheck_passes_and_detects_perturbation() {
    let out = wdn(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    for op in wdn::gradcheck::SUITE {
        assert!(text.contains(op), "{op} missing from the report");
    }
    let out = wdn(&["gradcheck", "--perturb", "0.001"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_errors_have_their_own_code() {
    assert_eq!(code(&wdn(&["degrade"])), 64);
    assert_eq!(code(&wdn(&["--help"])), 0);
}
