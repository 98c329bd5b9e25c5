use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn relight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relight"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
[train]
batch_size = 4
[train.net]
height = 16
width = 16
levels = 2
base_width = 4
latent_width = 8
light_hidden = 8
"#;

/// 3 scenes x 2 positions at 16x16 plus a tiny-network config file.
fn fixture() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = relight(&[
        "gen", "--scenes", "3", "--positions", "-60:60,0:30", "--size", "16x16", "--seed", "4", "--test-fraction", "0.34",
        "--out", p(&data),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    (dir, data, cfg)
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn gen_is_byte_identical_and_uses_benchmark_positions() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = relight(&["gen", "--scenes", "2", "--positions", "default9", "--size", "12x16", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    let m = relight::dataio::read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 18);
    for pos in relight::solarpos::BENCHMARK_POSITIONS {
        assert!(m.entries.iter().any(|e| e.sun() == pos), "{pos} missing");
    }
}

#[test]
fn gen_rejects_position_below_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let o = relight(&["gen", "--scenes", "1", "--positions", "0:95", "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&relight(&["frobnicate"])), 1);
    assert_eq!(code(&relight(&["gen"])), 1);
    assert_eq!(code(&relight(&["--help"])), 0);
}

#[test]
fn sunpos_reproduces_spa_example() {
    let o = relight(&["sunpos", "--lat", "39.742476", "--lon", "-105.1786", "--time", "2003-10-17T12:30:30-07:00"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = stdout(&o);
    let nums: Vec<f64> = text.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let (az, zen) = (nums[0], nums[1]);
    assert!((zen - 50.11162).abs() < 0.3, "{text}");
    assert!((az.rem_euclid(360.0) - 194.34024).abs() < 0.3, "{text}");
    // naive times are UTC
    let utc = relight(&["sunpos", "--lat", "39.742476", "--lon", "-105.1786", "--time", "2003-10-17T19:30:30"]);
    assert_eq!(stdout(&utc), text);
}

#[test]
fn sunpos_malformed_time_is_usage_error() {
    let o = relight(&["sunpos", "--lat", "0", "--lon", "0", "--time", "yesterday noon"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_passes_and_perturbation_fails() {
    let o = relight(&["verify", "--suite", "colorspace", "--suite", "solar", "--suite", "ssim"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("[PASS]"));
    let o = relight(&["verify", "--suite", "colorspace", "--perturb-colorspace", "1e-2"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("[FAIL]"));
}

#[test]
fn missing_files_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = relight(&["train", "--data", p(&dir.path().join("nope.json")), "--ablate", "no-sun-loss", "--out", "x"]);
    assert_eq!(code(&o), 3, "{o:?}");
    let bogus = dir.path().join("bogus.rlck");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = relight(&["eval", "--model", p(&bogus), "--data", p(dir.path())]);
    assert_eq!(code(&o), 3, "{o:?}");
}

#[test]
fn train_requires_sunest_unless_ablated() {
    let (dir, data, cfg) = fixture();
    let out = dir.path().join("m.rlck");
    let o = relight(&["--config", p(&cfg), "train", "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 1, "{o:?}");
    assert!(!out.exists());
    let o = relight(&["--config", p(&cfg), "train", "--data", p(&data), "--ablate", "sideways", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_relight_eval_round_trip() {
    let (dir, data, cfg) = fixture();
    let d = dir.path();
    let sun = d.join("sun.rlck");
    let o = relight(&["--threads", "1", "train-sunest", "--data", p(&data), "--epochs", "1", "--out", p(&sun)]);
    assert_eq!(code(&o), 0, "{o:?}");

    // flags override the file: the file says nothing about epochs, the flag says 2
    let (m1, m2, log) = (d.join("m1.rlck"), d.join("m2.rlck"), d.join("st.log"));
    for out in [&m1, &m2] {
        let o = relight(&[
            "--threads", "1", "--config", p(&cfg), "train", "--data", p(&data), "--sunest", p(&sun), "--epochs", "2",
            "--out", p(out), "--log", p(&log),
        ]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap(), "deterministic reruns differ");
    let manifest = relight::dataio::read_manifest(&data.join("manifest.json")).unwrap();
    let train = manifest.split(relight::dataio::Split::Train).len();
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 2 * train.div_ceil(4));

    let e = &manifest.split(relight::dataio::Split::Test)[0];
    let (depth, semseg) = (data.join(&e.depth), data.join(&e.semseg));
    let (img1, img2) = (d.join("r1.png"), d.join("r2.png"));
    for img in [&img1, &img2] {
        let o = relight(&[
            "relight", "--model", p(&m1), "--depth", p(&depth), "--semseg", p(&semseg), "--azimuth", "-60", "--zenith",
            "60", "--out", p(img),
        ]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    assert_eq!(fs::read(&img1).unwrap(), fs::read(&img2).unwrap());
    let rgb = relight::dataio::read_rgb(&img1).unwrap();
    assert_eq!((rgb.width, rgb.height), (16, 16));
    let o = relight(&[
        "relight", "--model", p(&m1), "--depth", p(&depth), "--semseg", p(&semseg), "--azimuth", "0", "--zenith", "95",
        "--out", p(&d.join("r3.png")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!d.join("r3.png").exists());

    let report = d.join("report.toml");
    let o = relight(&["eval", "--model", p(&m1), "--data", p(&data), "--report", p(&report)]);
    assert_eq!(code(&o), 0, "{o:?}");
    let r = relight::metrics::MssimReport::from_toml(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.schema_version, relight::metrics::REPORT_SCHEMA_VERSION);
    assert_eq!(r.positions.len(), 2);

    let cmp = d.join("cmp.toml");
    let o = relight(&[
        "eval", "--model", p(&m1), "--name", "a", "--model", p(&m2), "--name", "b", "--baseline", "--data", p(&data),
        "--report", p(&cmp),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = fs::read_to_string(&cmp).unwrap();
    assert_eq!(text.matches("[[model]]").count(), 3, "{text}");

    let o = relight(&["eval", "--model", p(&sun), "--data", p(&data)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("azimuth MAE"));
}

#[test]
fn depth_only_ablation_masks_semseg() {
    let (dir, data, cfg) = fixture();
    let out = dir.path().join("d.rlck");
    let o = relight(&[
        "--config", p(&cfg), "train", "--data", p(&data), "--ablate", "depth-only", "--epochs", "1", "--out", p(&out),
    ]);
    // depth-only keeps the sun loss, so it still needs an estimator
    assert_eq!(code(&o), 1);
    let sun = dir.path().join("sun.rlck");
    assert_eq!(code(&relight(&["train-sunest", "--data", p(&data), "--epochs", "1", "--out", p(&sun)])), 0);
    let o = relight(&[
        "--config", p(&cfg), "train", "--data", p(&data), "--ablate", "depth-only", "--sunest", p(&sun), "--epochs", "1",
        "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let ck = relight::checkpoint::Checkpoint::load(&out).unwrap();
    assert_eq!(ck.header.config["inputs"]["semseg"], false);
    assert_eq!(ck.header.config["inputs"]["depth"], true);
}
