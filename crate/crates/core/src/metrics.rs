//! SSIM / MSSIM and the per-sun-position evaluation report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::RgbImage;
use crate::dataio::{DataError, Manifest, ManifestEntry, Split};
use crate::solarpos::{SunGrid, SunPosition, BENCHMARK_POSITIONS};

/// Version stamped into every serialized report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("images differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmall { width: usize, height: usize, window: usize },
    #[error("invalid SSIM config: {0}")]
    Config(String),
    #[error("no test entries to evaluate")]
    Empty,
    #[error("model failed on {entry}: {message}")]
    Model { entry: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("report serialization: {0}")]
    Serialize(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(MetricError::Config(format!("window {} must be odd", self.window)));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(MetricError::Config("k1, k2, sigma and L must be positive".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }

    fn constants(&self) -> (f64, f64) {
        ((self.k1 * self.dynamic_range).powi(2), (self.k2 * self.dynamic_range).powi(2))
    }
}

fn check(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<(), MetricError> {
    cfg.validate()?;
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    if a.width < cfg.window || a.height < cfg.window {
        return Err(MetricError::TooSmall {
            width: a.width,
            height: a.height,
            window: cfg.window,
        });
    }
    Ok(())
}

fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.data.iter().map(|px| px[c]).collect()
}

/// Valid-region separable filtering of a `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            rows[y * ow + ox] = g.iter().zip(&src[ox..ox + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = g.iter().enumerate().map(|(i, gi)| gi * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

fn ssim_index(ma: f64, mb: f64, va: f64, vb: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

fn mssim_channel(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &SsimConfig) -> f64 {
    let g = cfg.kernel();
    let (c1, c2) = cfg.constants();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let ma = filter_valid(a, h, w, &g);
    let mb = filter_valid(b, h, w, &g);
    let saa = filter_valid(&prod(a, a), h, w, &g);
    let sbb = filter_valid(&prod(b, b), h, w, &g);
    let sab = filter_valid(&prod(a, b), h, w, &g);
    let n = ma.len();
    let mut sum = 0.0;
    for i in 0..n {
        let va = saa[i] - ma[i] * ma[i];
        let vb = sbb[i] - mb[i] * mb[i];
        let cov = sab[i] - ma[i] * mb[i];
        sum += ssim_index(ma[i], mb[i], va, vb, cov, c1, c2);
    }
    sum / n as f64
}

/// Mean SSIM over the valid region, averaged over the three channels.
pub fn mssim(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<f64, MetricError> {
    check(a, b, cfg)?;
    let s: f64 = (0..3)
        .map(|c| mssim_channel(&channel(a, c), &channel(b, c), a.height, a.width, cfg))
        .sum();
    Ok(s / 3.0)
}

/// Direct-definition MSSIM: every window's weighted moments are summed
/// explicitly, with centered second moments.
pub fn mssim_reference(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<f64, MetricError> {
    check(a, b, cfg)?;
    let g = cfg.kernel();
    let k = cfg.window;
    let (c1, c2) = cfg.constants();
    let (h, w) = (a.height, a.width);
    let mut total = 0.0;
    for c in 0..3 {
        let (pa, pb) = (channel(a, c), channel(b, c));
        let mut sum = 0.0;
        let mut count = 0usize;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g[i] * g[j];
                        let idx = (oy + i) * w + ox + j;
                        ma += wt * pa[idx];
                        mb += wt * pb[idx];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g[i] * g[j];
                        let idx = (oy + i) * w + ox + j;
                        let (da, db) = (pa[idx] - ma, pb[idx] - mb);
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                sum += ssim_index(ma, mb, va, vb, cov, c1, c2);
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    Ok(total / 3.0)
}

/// Anything that can produce an image of a scene under a requested sun.
pub trait Relighter: Sync {
    fn relight_tuple(&self, depth: &[f64], semseg: &[u8], width: usize, height: usize, target: &SunPosition)
        -> Result<RgbImage, String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub azimuth: f64,
    pub zenith: f64,
    pub mean_mssim: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MssimReport {
    pub schema_version: u32,
    pub model: String,
    pub ssim: SsimConfig,
    pub color_handling: String,
    pub evaluations: usize,
    /// Mean of the per-position means.
    pub global_mean: f64,
    #[serde(rename = "position")]
    pub positions: Vec<PositionScore>,
}

impl MssimReport {
    pub fn position(&self, p: &SunPosition) -> Option<&PositionScore> {
        self.positions.iter().find(|s| s.azimuth == p.azimuth && s.zenith == p.zenith)
    }

    pub fn to_toml(&self) -> Result<String, MetricError> {
        toml::to_string(self).map_err(|e| MetricError::Serialize(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self, MetricError> {
        toml::from_str(s).map_err(|e| MetricError::Serialize(e.to_string()))
    }
}

/// Per-channel SSIM averaged over R, G, B.
pub const COLOR_HANDLING: &str = "per-channel SSIM on sRGB, averaged over R, G, B";

fn key(p: &SunPosition) -> (u64, u64) {
    (p.azimuth.to_bits(), p.zenith.to_bits())
}

/// Benchmark positions first, in their table order, then any others.
fn ordered_positions(entries: &[&ManifestEntry]) -> Vec<SunPosition> {
    let mut seen: BTreeMap<(u64, u64), SunPosition> = BTreeMap::new();
    for e in entries {
        let s = e.sun();
        seen.insert(key(&s), s);
    }
    let mut out: Vec<SunPosition> = BENCHMARK_POSITIONS.iter().filter(|p| seen.remove(&key(p)).is_some()).copied().collect();
    let mut rest: Vec<SunPosition> = seen.into_values().collect();
    rest.sort_by(|a, b| a.azimuth.total_cmp(&b.azimuth).then(a.zenith.total_cmp(&b.zenith)));
    out.extend(rest);
    out
}

/// Relights every test tuple to its own sun position and scores it against
/// the ground truth. `positions` restricts (and orders) the report; positions
/// without ground truth are skipped with a warning.
pub fn evaluate(
    model: &dyn Relighter,
    name: &str,
    manifest: &Manifest,
    positions: Option<&[SunPosition]>,
    cfg: &SsimConfig,
) -> Result<MssimReport, MetricError> {
    cfg.validate()?;
    let test = manifest.split(Split::Test);
    if test.is_empty() {
        return Err(MetricError::Empty);
    }
    let wanted = match positions {
        Some(p) => p.to_vec(),
        None => ordered_positions(&test),
    };
    let mut scores = Vec::new();
    let mut total = 0usize;
    for pos in &wanted {
        let entries: Vec<&ManifestEntry> = test.iter().copied().filter(|e| key(&e.sun()) == key(pos)).collect();
        if entries.is_empty() {
            log::warn!("no ground truth for sun position {pos}; skipped");
            continue;
        }
        let values: Vec<Result<f64, MetricError>> = entries
            .par_iter()
            .map(|e| {
                let t = manifest.load(e, &SunGrid::Continuous)?;
                let out = model
                    .relight_tuple(&t.depth, &t.semseg, t.width, t.height, pos)
                    .map_err(|message| MetricError::Model {
                        entry: e.id.clone(),
                        message,
                    })?;
                mssim(&out, &t.rgb, cfg)
            })
            .collect();
        let mut sum = 0.0;
        for v in values {
            sum += v?;
        }
        total += entries.len();
        scores.push(PositionScore {
            azimuth: pos.azimuth,
            zenith: pos.zenith,
            mean_mssim: sum / entries.len() as f64,
            count: entries.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let global_mean = scores.iter().map(|s| s.mean_mssim).sum::<f64>() / scores.len() as f64;
    Ok(MssimReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: name.to_string(),
        ssim: cfg.clone(),
        color_handling: COLOR_HANDLING.to_string(),
        evaluations: total,
        global_mean,
        positions: scores,
    })
}

/// Predicts, for each sun position, the pixelwise mean of the training
/// images lit from there, ignoring geometry.
#[derive(Clone, Debug)]
pub struct MeanImageBaseline {
    means: Vec<(SunPosition, RgbImage)>,
}

impl MeanImageBaseline {
    pub fn fit(manifest: &Manifest) -> Result<Self, MetricError> {
        let train = manifest.split(Split::Train);
        if train.is_empty() {
            return Err(MetricError::Empty);
        }
        let mut acc: BTreeMap<(u64, u64), (SunPosition, Vec<[f64; 3]>, usize, usize, usize)> = BTreeMap::new();
        for e in train {
            let t = manifest.load(e, &SunGrid::Continuous)?;
            let s = e.sun();
            let slot = acc
                .entry(key(&s))
                .or_insert_with(|| (s, vec![[0.0; 3]; t.width * t.height], 0, t.width, t.height));
            if slot.3 != t.width || slot.4 != t.height {
                return Err(MetricError::DimensionMismatch(slot.3, slot.4, t.width, t.height));
            }
            for (a, px) in slot.1.iter_mut().zip(&t.rgb.data) {
                for c in 0..3 {
                    a[c] += px[c];
                }
            }
            slot.2 += 1;
        }
        let means = acc
            .into_values()
            .map(|(s, sum, n, w, h)| {
                let data = sum.into_iter().map(|px| px.map(|v| (v / n as f64).clamp(0.0, 1.0))).collect();
                (s, RgbImage { width: w, height: h, data })
            })
            .collect();
        Ok(Self { means })
    }
}

impl Relighter for MeanImageBaseline {
    fn relight_tuple(&self, _: &[f64], _: &[u8], width: usize, height: usize, target: &SunPosition) -> Result<RgbImage, String> {
        let (_, img) = self
            .means
            .iter()
            .find(|(s, _)| key(s) == key(target))
            .ok_or_else(|| format!("no training images at {target}"))?;
        if img.width != width || img.height != height {
            return Err("baseline image size differs".into());
        }
        Ok(img.clone())
    }
}

/// Several models scored on the same test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub ssim: SsimConfig,
    pub color_handling: String,
    #[serde(rename = "model")]
    pub models: Vec<MssimReport>,
}

impl ComparisonReport {
    pub fn new(models: Vec<MssimReport>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            ssim: models.first().map(|m| m.ssim.clone()).unwrap_or_default(),
            color_handling: COLOR_HANDLING.to_string(),
            models,
        }
    }

    pub fn to_toml(&self) -> Result<String, MetricError> {
        toml::to_string(self).map_err(|e| MetricError::Serialize(e.to_string()))
    }

    /// Fixed-width text table, one row per model.
    pub fn table(&self) -> String {
        let mut s = format!("{:<16} {:>8} {:>6}\n", "model", "mssim", "n");
        for m in &self.models {
            s.push_str(&format!("{:<16} {:>8.4} {:>6}\n", m.model, m.global_mean, m.evaluations));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> RgbImage {
        RgbImage::new(n, n, (0..n * n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    #[test]
    fn identical_images_score_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 24);
        assert_eq!(mssim(&a, &a, &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn constant_images_hand_value() {
        let cfg = SsimConfig::default();
        let a = RgbImage::filled(16, 16, [0.2; 3]);
        let b = RgbImage::filled(16, 16, [0.7; 3]);
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * 0.2 * 0.7 + c1) / (0.2f64.powi(2) + 0.7f64.powi(2) + c1);
        let got = mssim(&a, &b, &cfg).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn optimized_matches_reference_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SsimConfig::default();
        for _ in 0..3 {
            let a = random_image(&mut rng, 20);
            let b = random_image(&mut rng, 20);
            let fast = mssim(&a, &b, &cfg).unwrap();
            assert!((fast - mssim_reference(&a, &b, &cfg).unwrap()).abs() < 1e-9);
            assert!((fast - mssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn size_errors() {
        let cfg = SsimConfig::default();
        let a = RgbImage::filled(8, 8, [0.5; 3]);
        assert!(matches!(mssim(&a, &a, &cfg), Err(MetricError::TooSmall { .. })));
        let b = RgbImage::filled(12, 12, [0.5; 3]);
        let c = RgbImage::filled(13, 12, [0.5; 3]);
        assert!(matches!(mssim(&b, &c, &cfg), Err(MetricError::DimensionMismatch(..))));
        let bad = SsimConfig { window: 10, ..cfg };
        assert!(bad.validate().is_err());
    }
}
