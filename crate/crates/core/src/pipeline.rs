//! Training orchestration: sun-estimator pre-training, then Shadow Transfer
//! training against the frozen estimator, plus relighting and evaluation glue.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::colorspace::RgbImage;
use crate::dataio::{DataError, Manifest, ManifestEntry, Split};
use crate::losses::{total_loss, FeatureExtractor, LossError, LossReport, LossSetup, LossTarget, LossWeights, SunEstNet};
use crate::metrics::Relighter;
use crate::network::{geometry_input, InputMask, NetConfig, NetError, ShadowTransferModel, StageLink};
use crate::nn::{Optimizer, OptimizerKind};
use crate::solarpos::{decode_light, training_light, wrap_azimuth, LightVector, SolarError, SunGrid, SunPosition};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("manifest has no {0} entries")]
    Empty(&'static str),
    #[error("training diverged at step {step} (epoch {epoch}): {what} is not finite")]
    Diverged { step: u64, epoch: usize, what: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Solar(#[from] SolarError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Input and loss switches for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_sunest_loss: bool,
    pub use_depth_input: bool,
    pub use_semseg_input: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_sunest_loss: true,
            use_depth_input: true,
            use_semseg_input: true,
        }
    }
}

impl Ablation {
    pub const NAMES: [&'static str; 4] = ["none", "no-sun-loss", "depth-only", "seg-only"];

    pub fn from_name(name: &str) -> Option<Self> {
        let full = Self::default();
        Some(match name {
            "none" => full,
            "no-sun-loss" => Self {
                use_sunest_loss: false,
                ..full
            },
            "depth-only" => Self {
                use_semseg_input: false,
                ..full
            },
            "seg-only" => Self {
                use_depth_input: false,
                ..full
            },
            _ => return None,
        })
    }

    pub fn inputs(&self) -> InputMask {
        InputMask {
            depth: self.use_depth_input,
            semseg: self.use_semseg_input,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub weights: LossWeights,
    /// Sum per-sample gradients in sample order.
    pub deterministic: bool,
    pub optimizer: OptimizerKind,
    pub net: NetConfig,
    pub grid: SunGrid,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 2e-4,
            batch_size: 8,
            seed: 0,
            ablation: Ablation::default(),
            weights: LossWeights::default(),
            deterministic: true,
            optimizer: OptimizerKind::default(),
            net: NetConfig::default(),
            grid: SunGrid::default(),
        }
    }
}

fn check_schedule(epochs: usize, lr: f64, batch: usize) -> Result<(), PipelineError> {
    if epochs == 0 {
        return Err(PipelineError::Config("epochs must be at least 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(PipelineError::Config(format!("learning rate {lr} must be positive")));
    }
    if batch == 0 {
        return Err(PipelineError::Config("batch size must be at least 1".into()));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        check_schedule(self.epochs, self.lr, self.batch_size)?;
        if !self.ablation.use_depth_input && !self.ablation.use_semseg_input {
            return Err(PipelineError::Config("at least one of depth and semseg input must stay enabled".into()));
        }
        Ok(())
    }

    /// Network config with the ablation's input mask applied.
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            inputs: self.ablation.inputs(),
            ..self.net.clone()
        }
    }

    /// Loss weights with the sun-estimation term dropped when ablated.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.ablation.use_sunest_loss {
            w.sunest = 0.0;
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SunEstConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub optimizer: OptimizerKind,
    pub grid: SunGrid,
}

impl Default for SunEstConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
            deterministic: true,
            optimizer: OptimizerKind::default(),
            grid: SunGrid::default(),
        }
    }
}

impl SunEstConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        check_schedule(self.epochs, self.lr, self.batch_size)
    }
}

/// One optimizer step of Shadow Transfer training, batch-averaged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub report: LossReport,
}

impl StepLog {
    pub fn line(&self) -> String {
        let r = &self.report;
        format!(
            "step={} epoch={} l1_l={:.6e} l1_ab={:.6e} perceptual={:.6e} style={:.6e} sunest={:.6e} total={:.6e}",
            self.step, self.epoch, r.l1_l, r.l1_ab, r.perceptual, r.style, r.sunest, r.total
        )
    }
}

/// One optimizer step of sun-estimator training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SunEstStep {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
}

impl SunEstStep {
    pub fn line(&self) -> String {
        format!("step={} epoch={} loss={:.6e}", self.step, self.epoch, self.loss)
    }
}

pub struct SunEstOutcome {
    pub net: SunEstNet<f32>,
    pub log: Vec<SunEstStep>,
}

pub struct TrainOutcome {
    pub model: ShadowTransferModel<f32>,
    pub log: Vec<StepLog>,
    /// Sun estimator and feature extractor checksums before and after.
    pub frozen_before: (Option<String>, String),
    pub frozen_after: (Option<String>, String),
}

/// Per-epoch sample order.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ epoch as u64);
    idx.shuffle(&mut rng);
    idx
}

/// Runs `f` on every batch member and returns the mean gradient plus the
/// per-sample side values, in batch order.
fn batch_gradient<R: Send>(
    batch: &[usize],
    len: usize,
    deterministic: bool,
    f: impl Fn(usize, &mut [f32]) -> Result<R, PipelineError> + Sync,
) -> Result<(Vec<f32>, Vec<R>), PipelineError> {
    let scale = 1.0 / batch.len() as f32;
    if deterministic {
        let parts: Vec<Result<(Vec<f32>, R), PipelineError>> = batch
            .par_iter()
            .map(|&i| {
                let mut g = vec![0.0f32; len];
                let r = f(i, &mut g)?;
                Ok((g, r))
            })
            .collect();
        let mut total = vec![0.0f32; len];
        let mut side = Vec::with_capacity(batch.len());
        for p in parts {
            let (g, r) = p?;
            for (t, v) in total.iter_mut().zip(&g) {
                *t += v;
            }
            side.push(r);
        }
        total.iter_mut().for_each(|v| *v *= scale);
        Ok((total, side))
    } else {
        let (mut total, side) = batch
            .par_iter()
            .map(|&i| {
                let mut g = vec![0.0f32; len];
                let r = f(i, &mut g)?;
                Ok::<_, PipelineError>((g, vec![(i, r)]))
            })
            .try_reduce(
                || (vec![0.0f32; len], Vec::new()),
                |(mut a, mut ra), (b, rb)| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    ra.extend(rb);
                    Ok((a, ra))
                },
            )?;
        total.iter_mut().for_each(|v| *v *= scale);
        let mut side = side;
        side.sort_by_key(|(i, _)| batch.iter().position(|b| b == i));
        Ok((total, side.into_iter().map(|(_, r)| r).collect()))
    }
}

fn train_entries(manifest: &Manifest) -> Result<Vec<&ManifestEntry>, PipelineError> {
    let entries = manifest.split(Split::Train);
    if entries.is_empty() {
        return Err(PipelineError::Empty("train"));
    }
    Ok(entries)
}

struct SunSample {
    rgb: Tensor<f32>,
    light: LightVector,
}

pub fn train_sunest(manifest: &Manifest, cfg: &SunEstConfig) -> Result<SunEstOutcome, PipelineError> {
    cfg.validate()?;
    let entries = train_entries(manifest)?;
    let samples: Vec<SunSample> = entries
        .par_iter()
        .map(|e| {
            let t = manifest.load(e, &cfg.grid)?;
            Ok(SunSample {
                rgb: t.rgb.to_tensor(),
                light: training_light(&t.sun)?,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut net = SunEstNet::<f32>::init_parameters(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, net.params.len());
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        for batch in epoch_order(samples.len(), cfg.seed, epoch).chunks(cfg.batch_size) {
            let (grads, losses) = batch_gradient(batch, net.params.len(), cfg.deterministic, |i, g| {
                Ok(net.regression_step(&samples[i].rgb, &samples[i].light, g))
            })?;
            step += 1;
            let loss = losses.iter().map(|&l| l as f64).sum::<f64>() / losses.len() as f64;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(PipelineError::Diverged {
                    step,
                    epoch,
                    what: "sun-estimation loss".into(),
                });
            }
            opt.update(net.params.data_mut(), &grads);
            log.push(SunEstStep { step, epoch, loss });
        }
        if let Some(last) = log.last() {
            log::info!("sunest epoch {epoch} loss {:.5}", last.loss);
        }
    }
    Ok(SunEstOutcome { net, log })
}

/// Preprocessed training pair for the Shadow Transfer model.
pub struct StSample {
    pub geometry: Tensor<f32>,
    pub target: LossTarget<f32>,
    pub light: LightVector,
}

pub fn load_samples(manifest: &Manifest, entries: &[&ManifestEntry], net: &NetConfig, grid: &SunGrid) -> Result<Vec<StSample>, PipelineError> {
    entries
        .par_iter()
        .map(|e| {
            let t = manifest.load(e, grid)?;
            Ok(StSample {
                geometry: geometry_input(net, &t.depth, &t.semseg)?,
                target: LossTarget::from_rgb(&t.rgb),
                light: training_light(&t.sun)?,
            })
        })
        .collect()
}

/// Trains on preloaded samples; the estimator and extractor are only read.
pub fn train_on_samples(
    samples: &[StSample],
    sunest: Option<&SunEstNet<f32>>,
    features: &FeatureExtractor<f32>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(PipelineError::Empty("train"));
    }
    let weights = cfg.effective_weights();
    if weights.sunest != 0.0 && sunest.is_none() {
        return Err(PipelineError::Config("the sun-estimation loss needs a trained sun estimator".into()));
    }
    let frozen_before = (sunest.map(|n| n.params.checksum()), features.params().checksum());
    let mut model = ShadowTransferModel::<f32>::init_parameters(cfg.net_config(), cfg.seed)?;
    let setup = LossSetup::new(features, sunest.filter(|_| weights.sunest != 0.0), weights);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, model.params.len());
    let mut log = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        for batch in epoch_order(samples.len(), cfg.seed, epoch).chunks(cfg.batch_size) {
            let (grads, reports) = batch_gradient(batch, model.params.len(), cfg.deterministic, |i, g| {
                let s = &samples[i];
                let cache = model.forward_train(&s.geometry, &s.light, StageLink::Connected)?;
                let lg = total_loss(&setup, cache.l(), cache.ab(), &s.target)?;
                model.backward(&cache, lg.dl, lg.dab, g);
                Ok(lg.report)
            })?;
            step += 1;
            let mut report = LossReport::default();
            for r in &reports {
                report.accumulate(r);
            }
            let report = report.scaled(1.0 / reports.len() as f64);
            if !report.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(PipelineError::Diverged {
                    step,
                    epoch,
                    what: "total loss".into(),
                });
            }
            opt.update(model.params.data_mut(), &grads);
            log.push(StepLog { step, epoch, report });
        }
        if let Some(last) = log.last() {
            log::info!("shadow transfer epoch {epoch} total {:.5}", last.report.total);
        }
    }
    let frozen_after = (sunest.map(|n| n.params.checksum()), features.params().checksum());
    Ok(TrainOutcome {
        model,
        log,
        frozen_before,
        frozen_after,
    })
}

pub fn train_shadow_transfer(
    manifest: &Manifest,
    sunest: Option<&SunEstNet<f32>>,
    features: &FeatureExtractor<f32>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let entries = train_entries(manifest)?;
    let samples = load_samples(manifest, &entries, &cfg.net_config(), &cfg.grid)?;
    train_on_samples(&samples, sunest, features, cfg)
}

/// Renders the scene geometry under `target`.
pub fn relight(
    model: &ShadowTransferModel<f32>,
    depth: &[f64],
    semseg: &[u8],
    target: &SunPosition,
) -> Result<RgbImage, PipelineError> {
    let v = training_light(target)?;
    let g = geometry_input(&model.config, depth, semseg)?;
    Ok(model.forward(&g, &v)?.rgb)
}

impl Relighter for ShadowTransferModel<f32> {
    fn relight_tuple(&self, depth: &[f64], semseg: &[u8], width: usize, height: usize, target: &SunPosition) -> Result<RgbImage, String> {
        if width != self.config.width || height != self.config.height {
            return Err(format!(
                "{width}x{height} input, model expects {}x{}",
                self.config.width, self.config.height
            ));
        }
        relight(self, depth, semseg, target).map_err(|e| e.to_string())
    }
}

/// Mean absolute sun-estimation errors in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SunEstErrors {
    pub azimuth_mae: f64,
    pub zenith_mae: f64,
    pub count: usize,
}

pub fn sunest_errors(net: &SunEstNet<f32>, manifest: &Manifest, split: Split) -> Result<SunEstErrors, PipelineError> {
    let entries = manifest.split(split);
    if entries.is_empty() {
        return Err(PipelineError::Empty("evaluation"));
    }
    let errs: Vec<(f64, f64)> = entries
        .par_iter()
        .map(|e| {
            let t = manifest.load(e, &SunGrid::Continuous)?;
            let p = decode_light(&net.predict(&t.rgb.to_tensor()));
            Ok((wrap_azimuth(p.azimuth - t.sun.azimuth).abs(), (p.zenith - t.sun.zenith).abs()))
        })
        .collect::<Result<_, PipelineError>>()?;
    let n = errs.len() as f64;
    Ok(SunEstErrors {
        azimuth_mae: errs.iter().map(|e| e.0).sum::<f64>() / n,
        zenith_mae: errs.iter().map(|e| e.1).sum::<f64>() / n,
        count: errs.len(),
    })
}

/// Trailing moving average.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
