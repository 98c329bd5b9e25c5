//! `relight`: dataset generation, training, relighting, evaluation and
//! self-checks for the Shadow Transfer toolkit.

mod config;
mod error;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use relight::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Checkpointable};
use relight::dataio::{self, read_manifest, DepthEncoding, Manifest, Split, DEPTH_SCALE, DEPTH_SENTINEL};
use relight::losses::{FeatureExtractor, SunEstNet, FEATURE_SEED};
use relight::metrics::{evaluate, ComparisonReport, MeanImageBaseline, MssimReport, Relighter};
use relight::network::ShadowTransferModel;
use relight::pipeline::{self, Ablation};
use relight::scenegen::{generate_dataset, DatasetConfig};
use relight::solarpos::{sun_position, GeoTime, SunPosition};
use relight::verify::{run_suite, Suite, VerifyOptions};

use crate::config::{parse_positions, parse_size, FileConfig};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "relight", version, about = "Relight street scenes under a new sun position")]
struct Cli {
    /// Worker threads; `1` also forces deterministic gradient reduction.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with `[gen]`, `[sunest]`, `[train]` and `[eval]` tables.
    /// Command-line flags win over the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    Gen(GenArgs),
    /// Train the sun-position estimator.
    TrainSunest(TrainArgs),
    /// Train the two-stage relighting network.
    Train(TrainArgs),
    /// Relight one depth/semseg pair.
    Relight(RelightArgs),
    /// Score models on the held-out scenes.
    Eval(EvalArgs),
    /// Run the independent oracle suites.
    Verify(VerifyArgs),
    /// Sun position for a place and time.
    Sunpos(SunposArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    scenes: Option<usize>,
    /// `default9` or a list such as `-60:60,0:30`.
    #[arg(long, allow_hyphen_values = true)]
    positions: Option<String>,
    /// Raster size as HxW.
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// none | no-sun-loss | depth-only | seg-only
    #[arg(long)]
    ablate: Option<String>,
    /// Trained sun estimator, needed unless the sun loss is ablated.
    #[arg(long)]
    sunest: Option<PathBuf>,
    /// Per-step loss log, one line per optimizer step.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RelightArgs {
    #[arg(long)]
    model: PathBuf,
    /// 16-bit depth raster.
    #[arg(long)]
    depth: PathBuf,
    /// 8-bit class-id raster.
    #[arg(long)]
    semseg: PathBuf,
    /// Meters per stored depth unit.
    #[arg(long, default_value_t = DEPTH_SCALE)]
    depth_scale: f64,
    #[arg(long, allow_hyphen_values = true)]
    azimuth: f64,
    #[arg(long)]
    zenith: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to score; repeat for a comparison report.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Row label per model, in the same order (defaults to file stems).
    #[arg(long = "name")]
    names: Vec<String>,
    /// Also score the per-position mean-training-image baseline.
    #[arg(long)]
    baseline: bool,
    /// Manifest; test-split entries are scored.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suites to run (default: all).
    #[arg(long = "suite", value_parser = ["colorspace", "solar", "ssim", "gradcheck", "renderer", "all"])]
    suites: Vec<String>,
    /// Offset added to colorspace outputs, to demonstrate a failing suite.
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_colorspace: f64,
}

#[derive(Args, Debug)]
struct SunposArgs {
    #[arg(long, allow_hyphen_values = true)]
    lat: f64,
    #[arg(long, allow_hyphen_values = true)]
    lon: f64,
    /// ISO 8601 time; without an offset it is read as UTC.
    #[arg(long)]
    time: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.err);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(anyhow!(e)))?;
    }
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let single_thread = cli.threads == Some(1);
    match cli.command {
        Command::Gen(a) => gen(a, file),
        Command::TrainSunest(a) => train_sunest(a, file, single_thread),
        Command::Train(a) => train(a, file, single_thread),
        Command::Relight(a) => relight_one(a),
        Command::Eval(a) => eval(a, file),
        Command::Verify(a) => verify(a),
        Command::Sunpos(a) => sunpos(a),
    }
}

fn gen(a: GenArgs, file: FileConfig) -> Result<(), CliError> {
    let g = file.gen;
    let positions = parse_positions(a.positions.as_deref().unwrap_or(&g.positions))?;
    let (height, width) = parse_size(a.size.as_deref().unwrap_or(&g.size))?;
    let mut cfg = DatasetConfig::new(a.scenes.unwrap_or(g.scenes), positions, height, width, a.seed.unwrap_or(g.seed));
    cfg.test_fraction = a.test_fraction.unwrap_or(g.test_fraction);
    if cfg.scenes == 0 {
        return Err(CliError::usage(anyhow!("--scenes must be at least 1")));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(CliError::usage(anyhow!("test fraction must be in (0, 1)")));
    }
    let m = generate_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} tuples ({} train, {} test) to {}",
        m.entries.len(),
        m.split(Split::Train).len(),
        m.split(Split::Test).len(),
        a.out.display()
    );
    Ok(())
}

fn load_data(path: &Path) -> Result<Manifest, CliError> {
    let path = if path.is_dir() {
        path.join(dataio::MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(read_manifest(&path)?)
}

fn write_log(path: Option<&Path>, lines: impl Iterator<Item = String>) -> Result<(), CliError> {
    let Some(path) = path else { return Ok(()) };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?);
    for l in lines {
        writeln!(f, "{l}").map_err(|e| CliError::io(path, e))?;
    }
    f.flush().map_err(|e| CliError::io(path, e))
}

fn train_sunest(a: TrainArgs, file: FileConfig, single_thread: bool) -> Result<(), CliError> {
    if a.ablate.is_some() || a.sunest.is_some() {
        return Err(CliError::usage(anyhow!("--ablate and --sunest apply to `train` only")));
    }
    let mut cfg = file.sunest;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.deterministic |= single_thread;
    cfg.validate()?;
    let manifest = load_data(&a.data)?;
    let out = pipeline::train_sunest(&manifest, &cfg)?;
    save_checkpoint(&out.net, &a.out)?;
    write_log(a.log.as_deref(), out.log.iter().map(|s| s.line()))?;
    if let Some(last) = out.log.last() {
        println!("sun estimator: {} steps, final loss {:.5}", last.step, last.loss);
    }
    if !manifest.split(Split::Test).is_empty() {
        let err = pipeline::sunest_errors(&out.net, &manifest, Split::Test)?;
        println!(
            "held-out MAE: azimuth {:.2} deg, zenith {:.2} deg over {} images",
            err.azimuth_mae, err.zenith_mae, err.count
        );
    }
    Ok(())
}

fn train(a: TrainArgs, file: FileConfig, single_thread: bool) -> Result<(), CliError> {
    let mut cfg = file.train;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.deterministic |= single_thread;
    if let Some(name) = &a.ablate {
        cfg.ablation = Ablation::from_name(name).ok_or_else(|| {
            CliError::usage(anyhow!("unknown ablation '{name}', expected one of {:?}", Ablation::NAMES))
        })?;
    }
    cfg.validate()?;
    let needs_sun = cfg.effective_weights().sunest != 0.0;
    let sunest: Option<SunEstNet<f32>> = match (&a.sunest, needs_sun) {
        (Some(p), _) => Some(load_checkpoint(p)?),
        (None, true) => {
            return Err(CliError::usage(anyhow!(
                "--sunest is required unless the sun loss is off (--ablate no-sun-loss)"
            )))
        }
        (None, false) => None,
    };
    let manifest = load_data(&a.data)?;
    cfg.net.classes = manifest.num_classes();
    let features = FeatureExtractor::<f32>::new(FEATURE_SEED);
    let out = pipeline::train_shadow_transfer(&manifest, sunest.as_ref(), &features, &cfg)?;
    if out.frozen_before != out.frozen_after {
        return Err(CliError::usage(anyhow!("frozen loss networks changed during training")));
    }
    save_checkpoint(&out.model, &a.out)?;
    write_log(a.log.as_deref(), out.log.iter().map(|s| s.line()))?;
    if let Some(last) = out.log.last() {
        println!("shadow transfer: {} steps, final loss {:.5}", last.step, last.report.total);
    }
    Ok(())
}

fn relight_one(a: RelightArgs) -> Result<(), CliError> {
    let target = SunPosition::new(a.azimuth, a.zenith)?;
    let model: ShadowTransferModel<f32> = load_checkpoint(&a.model)?;
    let (dw, dh, raw) = dataio::read_depth_raw(&a.depth)?;
    let (sw, sh, semseg) = dataio::read_semseg(&a.semseg)?;
    if (dw, dh) != (sw, sh) {
        return Err(CliError::usage(anyhow!("depth is {dw}x{dh} but semseg is {sw}x{sh}")));
    }
    let depth = dataio::decode_depth(
        &raw,
        &DepthEncoding {
            scale: a.depth_scale,
            sky_sentinel: DEPTH_SENTINEL,
        },
    );
    let img = model
        .relight_tuple(&depth, &semseg, dw, dh, &target)
        .map_err(|m| CliError::usage(anyhow!(m)))?;
    dataio::write_rgb(&a.out, &img)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs, file: FileConfig) -> Result<(), CliError> {
    if !a.names.is_empty() && a.names.len() != a.models.len() {
        return Err(CliError::usage(anyhow!("give one --name per --model")));
    }
    let manifest = load_data(&a.data)?;
    let ssim = file.eval.ssim;
    let mut reports: Vec<MssimReport> = Vec::new();
    for (i, path) in a.models.iter().enumerate() {
        let name = a.names.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string())
        });
        let ck = Checkpoint::load(path)?;
        if ck.header.kind == <SunEstNet<f32> as Checkpointable>::KIND {
            let net = SunEstNet::<f32>::from_checkpoint(&ck)?;
            let e = pipeline::sunest_errors(&net, &manifest, Split::Test)?;
            println!(
                "{name}: azimuth MAE {:.2} deg, zenith MAE {:.2} deg over {} images",
                e.azimuth_mae, e.zenith_mae, e.count
            );
            continue;
        }
        let model = ShadowTransferModel::<f32>::from_checkpoint(&ck)?;
        reports.push(evaluate(&model, &name, &manifest, None, &ssim)?);
    }
    if a.baseline {
        let b = MeanImageBaseline::fit(&manifest)?;
        reports.push(evaluate(&b, "mean-image baseline", &manifest, None, &ssim)?);
    }
    if reports.is_empty() {
        return Ok(());
    }
    let text = if reports.len() == 1 {
        let r = &reports[0];
        for p in &r.positions {
            println!("[{:>4}, {:>3}]  {:.4}  (n={})", p.azimuth, p.zenith, p.mean_mssim, p.count);
        }
        println!("global mean {:.4}", r.global_mean);
        r.to_toml()?
    } else {
        let cmp = ComparisonReport::new(reports);
        print!("{}", cmp.table());
        cmp.to_toml()?
    };
    if let Some(path) = &a.report {
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let suites: Vec<Suite> = if a.suites.is_empty() || a.suites.iter().any(|s| s == "all") {
        Suite::ALL.to_vec()
    } else {
        a.suites.iter().filter_map(|s| Suite::from_name(s)).collect()
    };
    let opts = VerifyOptions {
        colorspace_perturbation: a.perturb_colorspace,
    };
    let mut failed = Vec::new();
    for s in suites {
        let r = run_suite(s, &opts);
        println!("{r}");
        if !r.passed() {
            failed.push(s.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::verification(anyhow!("failed suites: {}", failed.join(", "))))
    }
}

fn parse_time(s: &str) -> Result<f64, CliError> {
    use chrono::{DateTime, NaiveDateTime};
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            let t = t.and_utc();
            return Ok(t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9);
        }
    }
    Err(CliError::usage(anyhow!("cannot parse '{s}' as an ISO 8601 time")))
}

fn sunpos(a: SunposArgs) -> Result<(), CliError> {
    let ts = parse_time(&a.time)?;
    let p = sun_position(&GeoTime::new(a.lat, a.lon, ts)?)?;
    println!("azimuth {:.4} zenith {:.4}", p.azimuth, p.zenith);
    Ok(())
}
