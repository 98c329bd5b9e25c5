//! Independent oracles behind `relight verify`.
//!
//! Each suite re-derives its reference values from first principles instead
//! of calling back into the code under test: the colorimetry matrix is solved
//! from the sRGB primaries, SSIM is summed window by window with a 2-D
//! kernel, gradients come from central differences and shadows from an
//! exhaustive face-by-face ray cast.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{self, RgbImage};
use crate::losses::{total_loss, FeatureExtractor, LossSetup, LossTarget, LossWeights, SunEstNet, FEATURE_SEED};
use crate::metrics::{mssim, mssim_reference, SsimConfig};
use crate::network::{geometry_input, NetConfig, ShadowTransferModel, StageLink};
use crate::scenegen::{self, LightSpec, SceneSpec, Vec3};
use crate::solarpos::{self, discretize, GeoTime, SunPosition, BENCHMARK_POSITIONS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Colorspace,
    Solar,
    Ssim,
    Gradcheck,
    Renderer,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Colorspace, Suite::Solar, Suite::Ssim, Suite::Gradcheck, Suite::Renderer];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Colorspace => "colorspace",
            Suite::Solar => "solar",
            Suite::Ssim => "ssim",
            Suite::Gradcheck => "gradcheck",
            Suite::Renderer => "renderer",
        }
    }

    pub fn from_name(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Knobs for exercising the suites themselves.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VerifyOptions {
    /// Added to every component the colorspace code returns, so a broken
    /// conversion can be simulated without editing it.
    pub colorspace_perturbation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    /// `value < limit`, reported with both numbers.
    fn below(name: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value < limit, format!("{value:.3e} (limit {limit:.0e})"))
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "[{tag}] {}/{}: {}", self.suite, c.name, c.detail)?;
        }
        write!(
            f,
            "{}: {} ({:.1}s)",
            self.suite,
            if self.passed() { "ok" } else { "FAILED" },
            self.seconds
        )
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> SuiteReport {
    let start = Instant::now();
    let checks = match suite {
        Suite::Colorspace => colorspace_suite(opts.colorspace_perturbation),
        Suite::Solar => solar_suite(),
        Suite::Ssim => ssim_suite(),
        Suite::Gradcheck => gradcheck_suite(),
        Suite::Renderer => renderer_suite(),
    };
    SuiteReport {
        suite,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Reference implementations, kept free of calls into the checked modules.
pub mod oracle {
    use super::*;

    const PRIMARIES_XY: [[f64; 2]; 3] = [[0.64, 0.33], [0.30, 0.60], [0.15, 0.06]];
    /// Tabulated D65 white (ASTM E308), `Y = 1`.
    const WHITE_XYZ: [f64; 3] = [0.95047, 1.0, 1.08883];
    const EPSILON: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;

    fn det3(m: &[[f64; 3]; 3]) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Linear sRGB -> XYZ solved from the chromaticities of the primaries
    /// and the white point (Cramer's rule for the channel scales).
    pub fn rgb_to_xyz_matrix() -> [[f64; 3]; 3] {
        // columns are the primaries' XYZ with Y = 1
        let mut p = [[0.0; 3]; 3];
        for (j, [x, y]) in PRIMARIES_XY.iter().enumerate() {
            p[0][j] = x / y;
            p[1][j] = 1.0;
            p[2][j] = (1.0 - x - y) / y;
        }
        let d = det3(&p);
        let mut s = [0.0; 3];
        for (j, sj) in s.iter_mut().enumerate() {
            let mut q = p;
            for r in 0..3 {
                q[r][j] = WHITE_XYZ[r];
            }
            *sj = det3(&q) / d;
        }
        let mut m = p;
        for row in m.iter_mut() {
            for (v, sj) in row.iter_mut().zip(s) {
                *v *= sj;
            }
        }
        m
    }

    fn linearize(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }

    /// CIE formulation with the exact rational epsilon and kappa.
    fn f(t: f64) -> f64 {
        if t > EPSILON {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    }

    pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
        let m = rgb_to_xyz_matrix();
        let lin = rgb.map(linearize);
        let xyz: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| m[r][c] * lin[c]).sum());
        let [fx, fy, fz] = std::array::from_fn(|i| f(xyz[i] / WHITE_XYZ[i]));
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
    }

    /// SSIM straight from the definition: a 2-D Gaussian window slid over
    /// every valid position, moments computed per window.
    pub fn mssim(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> f64 {
        let k = cfg.window;
        let r = (k / 2) as f64;
        let mut w = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
                w[i * k + j] = (-d2 / (2.0 * cfg.sigma * cfg.sigma)).exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
        let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
        let (h, wd) = (a.height, a.width);
        let mut acc = 0.0;
        for c in 0..3 {
            let px = |img: &RgbImage, y: usize, x: usize| img.data[y * wd + x][c];
            let mut sum = 0.0;
            let mut n = 0.0;
            for oy in 0..=h - k {
                for ox in 0..=wd - k {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            mx += w[i * k + j] * px(a, oy + i, ox + j);
                            my += w[i * k + j] * px(b, oy + i, ox + j);
                        }
                    }
                    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let dx = px(a, oy + i, ox + j) - mx;
                            let dy = px(b, oy + i, ox + j) - my;
                            sx += w[i * k + j] * dx * dx;
                            sy += w[i * k + j] * dy * dy;
                            sxy += w[i * k + j] * dx * dy;
                        }
                    }
                    sum += (2.0 * mx * my + c1) * (2.0 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
                    n += 1.0;
                }
            }
            acc += sum / n;
        }
        acc / 3.0
    }

    /// Ray/box faces tested one plane at a time. Returns the smallest
    /// `t >= 0` and the face normal.
    fn box_faces(lo: [f64; 3], hi: [f64; 3], o: [f64; 3], d: [f64; 3]) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, [f64; 3])> = None;
        for axis in 0..3 {
            if d[axis] == 0.0 {
                continue;
            }
            for (plane, sign) in [(lo[axis], -1.0), (hi[axis], 1.0)] {
                let t = (plane - o[axis]) / d[axis];
                if t < 0.0 {
                    continue;
                }
                let inside = (0..3)
                    .filter(|&q| q != axis)
                    .all(|q| {
                        let v = o[q] + t * d[q];
                        v >= lo[q] && v <= hi[q]
                    });
                if inside && best.is_none_or(|(bt, _)| t < bt) {
                    let mut n = [0.0; 3];
                    n[axis] = sign;
                    best = Some((t, n));
                }
            }
        }
        best
    }

    fn arr(v: Vec3) -> [f64; 3] {
        [v.x, v.y, v.z]
    }

    /// Per-pixel "is this surface point cut off from the sun" by exhaustive
    /// search over every face of every box. Sky pixels are unshadowed.
    pub fn shadow_mask(scene: &SceneSpec, sun: &SunPosition, height: usize, width: usize) -> Vec<bool> {
        let boxes: Vec<([f64; 3], [f64; 3])> = scene
            .objects
            .iter()
            .map(|o| {
                let (c, s) = (arr(o.center), arr(o.size));
                (std::array::from_fn(|i| c[i] - s[i] / 2.0), std::array::from_fn(|i| c[i] + s[i] / 2.0))
            })
            .collect();
        let (az, zen) = (sun.azimuth.to_radians(), sun.zenith.to_radians());
        let to_sun = [zen.sin() * az.sin(), zen.sin() * az.cos(), zen.cos()];
        let mut mask = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                let ray = scene.camera_ray(row, col, height, width);
                let (o, d) = (arr(ray.origin), arr(ray.dir));
                let mut hit: Option<(f64, [f64; 3])> = None;
                if d[2] < 0.0 {
                    let t = -o[2] / d[2];
                    if t <= scenegen::MAX_DEPTH {
                        hit = Some((t, [0.0, 0.0, 1.0]));
                    }
                }
                for (lo, hi) in &boxes {
                    if let Some((t, n)) = box_faces(*lo, *hi, o, d) {
                        if hit.is_none_or(|(bt, _)| t < bt) {
                            hit = Some((t, n));
                        }
                    }
                }
                let Some((t, n)) = hit else {
                    mask.push(false);
                    continue;
                };
                let p: [f64; 3] = std::array::from_fn(|i| o[i] + t * d[i] + n[i] * scenegen::SHADOW_EPS);
                mask.push(boxes.iter().any(|(lo, hi)| box_faces(*lo, *hi, p, to_sun).is_some()));
            }
        }
        mask
    }
}

fn random_rgb(rng: &mut ChaCha8Rng) -> [f64; 3] {
    std::array::from_fn(|_| rng.gen::<f64>())
}

fn colorspace_suite(perturb: f64) -> Vec<Check> {
    let bump = |v: [f64; 3]| v.map(|x| x + perturb);
    let to_lab = |rgb: [f64; 3]| bump(colorspace::rgb_to_lab(rgb));
    let to_rgb = |lab: [f64; 3]| bump(colorspace::lab_to_rgb(lab));
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc010);

    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let rgb = random_rgb(&mut rng);
        let back = to_rgb(to_lab(rgb));
        worst = (0..3).fold(worst, |w, c| w.max((back[c] - rgb[c]).abs()));
    }
    checks.push(Check::below("round trip 1e5 colors", worst, 1e-4));

    let red_oracle = oracle::srgb_to_lab([1.0, 0.0, 0.0]);
    let published = [53.241, 80.092, 67.203];
    let pub_err = (0..3).fold(0.0f64, |w, c| w.max((red_oracle[c] - published[c]).abs()));
    checks.push(Check::below("oracle red vs published", pub_err, 1e-3));
    let red = to_lab([1.0, 0.0, 0.0]);
    let red_err = (0..3).fold(0.0f64, |w, c| w.max((red[c] - red_oracle[c]).abs()));
    checks.push(Check::below("red vs oracle", red_err, 1e-3));

    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let rgb = random_rgb(&mut rng);
        let (a, b) = (to_lab(rgb), oracle::srgb_to_lab(rgb));
        worst = (0..3).fold(worst, |w, c| w.max((a[c] - b[c]).abs()));
    }
    checks.push(Check::below("1e4 colors vs oracle", worst, 1e-3));

    let mut worst: f64 = 0.0;
    for i in 0..=255 {
        let g = i as f64 / 255.0;
        let lab = to_lab([g; 3]);
        worst = worst.max(lab[1].abs()).max(lab[2].abs());
    }
    checks.push(Check::below("grays stay neutral", worst, 1e-6));
    checks
}

fn solar_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    // published SPA example, 2003-10-17 12:30:30 local (-7 h), no refraction
    // inputs needed beyond the defaults at this precision
    const SPA_TS: f64 = 1_066_419_030.0;
    const SPA_ZENITH: f64 = 50.11162;
    const SPA_AZIMUTH_NORTH: f64 = 194.34024;
    match GeoTime::new(39.742476, -105.1786, SPA_TS).and_then(|g| solarpos::sun_position(&g)) {
        Ok(p) => {
            checks.push(Check::below("spa zenith error (deg)", (p.zenith - SPA_ZENITH).abs(), 0.3));
            let daz = (p.azimuth_north() - SPA_AZIMUTH_NORTH + 540.0).rem_euclid(360.0) - 180.0;
            checks.push(Check::below("spa azimuth error (deg)", daz.abs(), 0.3));
        }
        Err(e) => checks.push(Check::new("spa case", false, e.to_string())),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x501a);
    let mut bad = 0;
    for _ in 0..10_000 {
        let p = SunPosition {
            azimuth: rng.gen_range(-180.0..180.0),
            zenith: rng.gen_range(0.0..180.0),
        };
        let d = discretize(&p);
        let on_grid = (d.azimuth / 10.0).fract() == 0.0 && (d.zenith / 10.0).fract() == 0.0;
        if discretize(&d) != d || !on_grid || d.validate().is_err() {
            bad += 1;
        }
    }
    checks.push(Check::new(
        "discretize idempotent on 1e4 positions",
        bad == 0,
        format!("{bad} violations"),
    ));
    checks
}

fn ssim_suite() -> Vec<Check> {
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x551f);
    let image = |rng: &mut ChaCha8Rng| {
        let data = (0..32 * 32).map(|_| random_rgb(rng)).collect();
        RgbImage::new(32, 32, data).expect("in range")
    };
    let mut checks = Vec::new();

    let mut not_one = 0;
    let mut worst: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for i in 0..50 {
        let a = image(&mut rng);
        // mix of unrelated, lightly and heavily corrupted pairs
        let noise = [1.0, 0.05, 0.3][i % 3];
        let b = RgbImage::new(
            32,
            32,
            a.data
                .iter()
                .map(|px| px.map(|v| (v + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)))
                .collect(),
        )
        .expect("in range");
        if mssim(&a, &a, &cfg).ok() != Some(1.0) {
            not_one += 1;
        }
        let (fast, brute) = (
            mssim(&a, &b, &cfg).unwrap_or(f64::NAN),
            oracle::mssim(&a, &b, &cfg),
        );
        let reference = mssim_reference(&a, &b, &cfg).unwrap_or(f64::NAN);
        worst = worst.max((fast - brute).abs()).max(if fast.is_nan() { f64::INFINITY } else { 0.0 });
        worst_ref = worst_ref.max((reference - brute).abs());
    }
    let flat = RgbImage::filled(32, 32, [0.3, 0.6, 0.9]);
    if mssim(&flat, &flat, &cfg).ok() != Some(1.0) {
        not_one += 1;
    }
    checks.push(Check::new("mssim(a, a) == 1 exactly", not_one == 0, format!("{not_one} of 51 differ")));
    checks.push(Check::below("50 pairs vs definitional ssim", worst, 1e-6));
    checks.push(Check::below("in-crate reference vs definitional ssim", worst_ref, 1e-6));
    checks
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_FLOOR)
}

/// The tiny double-precision model the gradient suite differentiates.
pub fn gradcheck_config() -> NetConfig {
    NetConfig {
        height: 8,
        width: 8,
        levels: 2,
        base_width: 4,
        latent_width: 8,
        light_hidden: 8,
        ..NetConfig::default()
    }
}

fn gradcheck_suite() -> Vec<Check> {
    let cfg = gradcheck_config();
    let mut model = match ShadowTransferModel::<f64>::init_parameters(cfg.clone(), 21) {
        Ok(m) => m,
        Err(e) => return vec![Check::new("model", false, e.to_string())],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x96ad);
    let n = cfg.height * cfg.width;
    let depth: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..200.0)).collect();
    let semseg: Vec<u8> = (0..n).map(|_| rng.gen_range(0..cfg.classes as u8)).collect();
    let geom = geometry_input::<f64>(&cfg, &depth, &semseg).expect("valid geometry");
    let gt = RgbImage::new(
        cfg.width,
        cfg.height,
        (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.05..0.95))).collect(),
    )
    .expect("in range");
    let target = LossTarget::<f64>::from_rgb(&gt);
    let light = solarpos::encode_light(&SunPosition {
        azimuth: 30.0,
        zenith: 40.0,
    });
    let extractor = FeatureExtractor::<f64>::new(FEATURE_SEED);
    let sunest = SunEstNet::<f64>::init_parameters(0x5e57);

    let only = |f: fn(&mut LossWeights)| {
        let mut w = LossWeights {
            l1_l: 0.0,
            l1_ab: 0.0,
            perceptual: 0.0,
            style: 0.0,
            sunest: 0.0,
        };
        f(&mut w);
        w
    };
    let terms: [(&str, LossWeights); 6] = [
        ("l1_L", only(|w| w.l1_l = 1.0)),
        ("l1_ab", only(|w| w.l1_ab = 1.0)),
        ("perceptual", only(|w| w.perceptual = 1.0)),
        ("style", only(|w| w.style = 1.0)),
        ("sunest", only(|w| w.sunest = 1.0)),
        ("total_loss", LossWeights::default()),
    ];
    let h = 1e-6;
    let mut checks = Vec::new();
    for (name, weights) in terms {
        let setup = LossSetup::new(&extractor, Some(&sunest), weights);
        let eval = |m: &ShadowTransferModel<f64>| -> f64 {
            let c = m.forward_train(&geom, &light, StageLink::Connected).expect("forward");
            total_loss(&setup, c.l(), c.ab(), &target).expect("loss").report.total
        };
        let cache = model.forward_train(&geom, &light, StageLink::Connected).expect("forward");
        let lg = total_loss(&setup, cache.l(), cache.ab(), &target).expect("loss");
        let mut grads = model.params.zeros_like();
        model.backward(&cache, lg.dl, lg.dab, &mut grads);
        let mut worst: f64 = 0.0;
        let mut largest: f64 = 0.0;
        for i in 0..model.params.len() {
            let orig = model.params.data()[i];
            model.params.data_mut()[i] = orig + h;
            let up = eval(&model);
            model.params.data_mut()[i] = orig - h;
            let down = eval(&model);
            model.params.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grads[i], numeric));
            largest = largest.max(grads[i].abs());
        }
        let mut c = Check::below(&format!("{name} max rel err"), worst, 1e-3);
        c.detail += &format!(", {} params, max |grad| {largest:.2e}", model.params.len());
        checks.push(c);
    }
    checks
}

/// Scenes and suns used by the renderer suite.
pub fn renderer_cases() -> (Vec<SceneSpec>, Vec<SunPosition>) {
    let scenes = (0..10).map(|i| SceneSpec::random(0x5ce0 + i)).collect();
    let suns = vec![BENCHMARK_POSITIONS[0], BENCHMARK_POSITIONS[4], BENCHMARK_POSITIONS[8]];
    (scenes, suns)
}

fn renderer_suite() -> Vec<Check> {
    let (scenes, suns) = renderer_cases();
    let (h, w) = (64, 64);
    let mut mismatched = 0usize;
    let mut shadowed = 0usize;
    let mut pixels = 0usize;
    let mut variant = 0usize;
    let mut errors = Vec::new();
    for scene in &scenes {
        let mut first: Option<(Vec<f64>, Vec<u8>)> = None;
        for sun in &suns {
            let trace = match scenegen::render_traced(scene, &LightSpec::new(*sun), h, w) {
                Ok(t) => t,
                Err(e) => {
                    errors.push(e.to_string());
                    continue;
                }
            };
            let expected = oracle::shadow_mask(scene, sun, h, w);
            mismatched += trace.shadow.iter().zip(&expected).filter(|(a, b)| a != b).count();
            shadowed += expected.iter().filter(|s| **s).count();
            pixels += expected.len();
            match &first {
                None => first = Some((trace.tuple.depth, trace.tuple.semseg)),
                Some((d, s)) => {
                    if *d != trace.tuple.depth || *s != trace.tuple.semseg {
                        variant += 1;
                    }
                }
            }
        }
    }
    vec![
        Check::new(
            "shadow mask equals brute force",
            mismatched == 0 && errors.is_empty() && shadowed > 0,
            format!("{mismatched} of {pixels} pixels differ, {shadowed} shadowed; errors {errors:?}"),
        ),
        Check::new(
            "depth and semseg invariant to sun",
            variant == 0 && errors.is_empty(),
            format!("{variant} renders differ from the first position"),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matrix_row_sums_hit_white() {
        let m = oracle::rgb_to_xyz_matrix();
        let sums: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
        assert!((sums[0] - 0.95047).abs() < 1e-12 && (sums[1] - 1.0).abs() < 1e-12);
        assert!((m[1][0] - 0.2126729).abs() < 1e-6);
    }

    #[test]
    fn cheap_suites_pass() {
        for s in [Suite::Colorspace, Suite::Solar, Suite::Ssim, Suite::Renderer] {
            let r = run_suite(s, &VerifyOptions::default());
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn perturbed_colorspace_fails() {
        let r = run_suite(
            Suite::Colorspace,
            &VerifyOptions {
                colorspace_perturbation: 1e-2,
            },
        );
        assert!(!r.passed());
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::from_name(s.name()), Some(s));
        }
        assert_eq!(Suite::from_name("nope"), None);
    }
}
