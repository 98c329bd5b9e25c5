//! The two stacked encoder-decoders: geometry + light -> L', then
//! L' + light -> a'b', composed into RGB.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{self, RgbImage, AB_SCALE, L_SCALE};
use crate::nn::layers::{broadcast, broadcast_backward, upsample2, upsample2_backward};
use crate::nn::{Act, BlockCache, ConvBlock, Linear, ParamStore};
use crate::scenegen::SKY_DEPTH;
use crate::solarpos::LightVector;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input is {got_h}x{got_w}, model expects {want_h}x{want_w}")]
    Dimensions {
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("semantic class {class} at pixel {index} is outside the {classes}-class palette")]
    UnknownClass { class: u8, index: usize, classes: usize },
    #[error("non-finite light vector")]
    NonFiniteLight,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    /// Number of semantic classes, one-hot encoded.
    pub classes: usize,
    pub levels: usize,
    pub base_width: usize,
    pub latent_width: usize,
    pub light_hidden: usize,
    /// U-net skips inside the chrominance stage.
    pub chroma_skips: bool,
    /// Input groups fed to the geometry encoder; disabled ones are zeroed.
    pub inputs: InputMask,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            classes: 4,
            levels: 3,
            base_width: 16,
            latent_width: 64,
            light_hidden: 32,
            chroma_skips: true,
            inputs: InputMask::default(),
        }
    }
}

impl NetConfig {
    /// Depth plus one channel per class.
    pub fn geometry_channels(&self) -> usize {
        1 + self.classes
    }

    pub fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if self.base_width == 0 || self.latent_width == 0 || self.light_hidden == 0 {
            return bad("widths must be at least 1");
        }
        if self.classes == 0 {
            return bad("at least one semantic class is required");
        }
        if self.height == 0 || self.width == 0 {
            return bad("raster dims must be positive");
        }
        if !self.inputs.depth && !self.inputs.semseg {
            return bad("at least one of depth and semseg input must be enabled");
        }
        let step = 1usize << self.levels;
        if self.height % step != 0 || self.width % step != 0 {
            return Err(NetError::Config(format!(
                "{}x{} is not divisible by 2^{}",
                self.height, self.width, self.levels
            )));
        }
        Ok(())
    }
}

/// Which input groups reach the geometry encoder. Disabled groups are zeroed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputMask {
    pub depth: bool,
    pub semseg: bool,
}

impl Default for InputMask {
    fn default() -> Self {
        Self { depth: true, semseg: true }
    }
}

/// Depth is squashed with `ln(1 + d) / ln(1 + SKY_DEPTH)` so sky maps to one.
pub fn normalize_depth(d: f64) -> f64 {
    (d.max(0.0).ln_1p() / SKY_DEPTH.ln_1p()).min(1.0)
}

/// Builds the `(1 + K) x H x W` geometry tensor, zeroing groups disabled in
/// `cfg.inputs`.
pub fn geometry_input<T: Real>(cfg: &NetConfig, depth: &[f64], semseg: &[u8]) -> Result<Tensor<T>, NetError> {
    let mask = cfg.inputs;
    let n = cfg.height * cfg.width;
    if depth.len() != n || semseg.len() != n {
        let got = depth.len().max(semseg.len());
        return Err(NetError::Dimensions {
            got_h: got / cfg.width.max(1),
            got_w: cfg.width,
            want_h: cfg.height,
            want_w: cfg.width,
        });
    }
    let mut t = Tensor::zeros(cfg.geometry_channels(), cfg.height, cfg.width);
    for (i, (&d, &c)) in depth.iter().zip(semseg).enumerate() {
        if c as usize >= cfg.classes {
            return Err(NetError::UnknownClass {
                class: c,
                index: i,
                classes: cfg.classes,
            });
        }
        if mask.depth {
            t.data[i] = T::lit(normalize_depth(d));
        }
        if mask.semseg {
            t.data[(1 + c as usize) * n + i] = T::one();
        }
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq)]
struct LightEncoder {
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct LightCache<T> {
    input: [T; 2],
    hidden: Vec<T>,
}

impl LightEncoder {
    fn forward<T: Real>(&self, p: &[T], v: [T; 2]) -> (Vec<T>, LightCache<T>) {
        let mut hidden = self.fc1.forward(p, &v);
        Act::Elu.forward_inplace(&mut hidden);
        let latent = self.fc2.forward(p, &hidden);
        (latent, LightCache { input: v, hidden })
    }

    fn backward<T: Real>(&self, p: &[T], cache: &LightCache<T>, dlatent: &[T], grads: &mut [T]) {
        let mut dh = self.fc2.backward(p, &cache.hidden, dlatent, Some(grads));
        Act::Elu.backward_inplace(&cache.hidden, &mut dh);
        self.fc1.backward(p, &cache.input, &dh, Some(grads));
    }
}

/// One U-net style encoder-decoder with a light latent fused at the bottleneck.
#[derive(Clone, Debug, PartialEq)]
struct Stage {
    stem: ConvBlock,
    downs: Vec<ConvBlock>,
    light: LightEncoder,
    fuse: ConvBlock,
    /// Indexed by level; `ups[i]` produces level-`i` features.
    ups: Vec<ConvBlock>,
    head: ConvBlock,
    skips: bool,
    latent: usize,
}

#[derive(Clone, Debug)]
struct StageCache<T> {
    stem: BlockCache<T>,
    downs: Vec<BlockCache<T>>,
    light: LightCache<T>,
    fuse: BlockCache<T>,
    ups: Vec<BlockCache<T>>,
    head: BlockCache<T>,
}

struct StageNames<'a> {
    stage: &'a str,
    encoder: &'a str,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        names: StageNames,
        cfg: &NetConfig,
        in_ch: usize,
        out_ch: usize,
        out_act: Act,
        skips: bool,
    ) -> Self {
        let enc = format!("{}.{}", names.stage, names.encoder);
        let light = format!("{}.light_encoder", names.stage);
        let dec = format!("{}.decoder", names.stage);
        let stem = ConvBlock::new(store, rng, &format!("{enc}.stem"), in_ch, cfg.width_at(0), 3, 1, Act::Elu);
        let downs = (0..cfg.levels)
            .map(|i| {
                ConvBlock::new(
                    store,
                    rng,
                    &format!("{enc}.down{}", i + 1),
                    cfg.width_at(i),
                    cfg.width_at(i + 1),
                    3,
                    2,
                    Act::Elu,
                )
            })
            .collect();
        let light = LightEncoder {
            fc1: Linear::new(store, rng, &format!("{light}.fc1"), 2, cfg.light_hidden),
            fc2: Linear::new(store, rng, &format!("{light}.fc2"), cfg.light_hidden, cfg.latent_width),
        };
        let bottleneck = cfg.width_at(cfg.levels);
        let fuse = ConvBlock::new(
            store,
            rng,
            &format!("{dec}.fuse"),
            bottleneck + cfg.latent_width,
            bottleneck,
            1,
            1,
            Act::Elu,
        );
        let mut ups: Vec<ConvBlock> = Vec::with_capacity(cfg.levels);
        for i in (0..cfg.levels).rev() {
            let cin = cfg.width_at(i + 1) + if skips { cfg.width_at(i) } else { 0 };
            ups.push(ConvBlock::new(store, rng, &format!("{dec}.up{i}"), cin, cfg.width_at(i), 3, 1, Act::Elu));
        }
        ups.reverse();
        let head = ConvBlock::new(store, rng, &format!("{dec}.head"), cfg.width_at(0), out_ch, 1, 1, out_act);
        Self {
            stem,
            downs,
            light,
            fuse,
            ups,
            head,
            skips,
            latent: cfg.latent_width,
        }
    }

    fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>, v: [T; 2]) -> StageCache<T> {
        let stem = self.stem.forward(p, x);
        let mut downs: Vec<BlockCache<T>> = Vec::with_capacity(self.downs.len());
        for d in &self.downs {
            let input = downs.last().map_or(stem.output(), |c| c.output());
            let c = d.forward(p, input);
            downs.push(c);
        }
        let bottleneck = downs.last().map_or(stem.output(), |c| c.output());
        let (latent, light) = self.light.forward(p, v);
        let lmap = broadcast(&latent, bottleneck.height, bottleneck.width);
        let fuse = self.fuse.forward(p, &Tensor::concat(&[bottleneck, &lmap]));
        let mut ups: Vec<Option<BlockCache<T>>> = vec![None; self.ups.len()];
        let mut cur = fuse.output().clone();
        for i in (0..self.ups.len()).rev() {
            let up = upsample2(&cur);
            let input = if self.skips {
                let skip = if i == 0 { stem.output() } else { downs[i - 1].output() };
                Tensor::concat(&[&up, skip])
            } else {
                up
            };
            let c = self.ups[i].forward(p, &input);
            cur = c.output().clone();
            ups[i] = Some(c);
        }
        let head = self.head.forward(p, &cur);
        StageCache {
            stem,
            downs,
            light,
            fuse,
            ups: ups.into_iter().map(|c| c.expect("every level decoded")).collect(),
            head,
        }
    }

    fn encode_light<T: Real>(&self, p: &[T], v: [T; 2]) -> Vec<T> {
        self.light.forward(p, v).0
    }

    /// `dy` is the gradient w.r.t. the stage output (after its activation).
    fn backward<T: Real>(
        &self,
        p: &[T],
        cache: &StageCache<T>,
        dy: Tensor<T>,
        grads: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let levels = self.downs.len();
        let mut dcur = self.head.backward(p, &cache.head, dy, Some(grads), true).expect("dx requested");
        // Gradients w.r.t. encoder outputs: index 0 is the stem, i > 0 is downs[i - 1].
        let mut denc: Vec<Option<Tensor<T>>> = vec![None; levels + 1];
        for i in 0..levels {
            let dinput = self.ups[i].backward(p, &cache.ups[i], dcur, Some(grads), true).expect("dx requested");
            let dup = if self.skips {
                let up_ch = dinput.channels - self.ups[i].conv.cout;
                let mut parts = dinput.split(&[up_ch, self.ups[i].conv.cout]);
                let dskip = parts.pop().expect("two parts");
                denc[i] = Some(dskip);
                parts.pop().expect("two parts")
            } else {
                dinput
            };
            dcur = upsample2_backward(&dup);
        }
        let dfuse = self.fuse.backward(p, &cache.fuse, dcur, Some(grads), true).expect("dx requested");
        let bottleneck_ch = dfuse.channels - self.latent;
        let mut parts = dfuse.split(&[bottleneck_ch, self.latent]);
        let dlatent = broadcast_backward(&parts.pop().expect("two parts"));
        self.light.backward(p, &cache.light, &dlatent, grads);
        let mut dnext = parts.pop().expect("two parts");
        for i in (0..levels).rev() {
            if let Some(s) = denc[i + 1].take() {
                dnext.add_assign(&s);
            }
            let mut dx = self.downs[i]
                .backward(p, &cache.downs[i], dnext, Some(grads), true)
                .expect("dx requested");
            if let Some(s) = denc[i].take() {
                dx.add_assign(&s);
            }
            dnext = dx;
        }
        self.stem.backward(p, &cache.stem, dnext, Some(grads), need_dx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LightBranch {
    Luminance,
    Chrominance,
}

/// Whether the chrominance stage sees the predicted luminance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StageLink {
    #[default]
    Connected,
    /// The chrominance stage receives an all-zero L' instead.
    Severed,
}

/// Network output in normalized Lab plus the displayed RGB.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub l: Tensor<T>,
    pub ab: Tensor<T>,
    pub rgb: RgbImage,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    lum: StageCache<T>,
    chroma: StageCache<T>,
    link: StageLink,
}

impl<T: Real> ForwardCache<T> {
    pub fn l(&self) -> &Tensor<T> {
        self.lum.head.output()
    }

    pub fn ab(&self) -> &Tensor<T> {
        self.chroma.head.output()
    }
}

#[derive(Clone, Debug)]
pub struct ShadowTransferModel<T> {
    pub config: NetConfig,
    pub seed: u64,
    pub params: ParamStore<T>,
    luminance: Stage,
    chrominance: Stage,
}

impl<T: Real> ShadowTransferModel<T> {
    /// Fan-in scaled uniform weights, zero biases, drawn from a ChaCha8 stream.
    pub fn init_parameters(config: NetConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let luminance = Stage::new(
            &mut params,
            &mut rng,
            StageNames {
                stage: "luminance",
                encoder: "geometry_encoder",
            },
            &config,
            config.geometry_channels(),
            1,
            Act::Sigmoid,
            true,
        );
        let chrominance = Stage::new(
            &mut params,
            &mut rng,
            StageNames {
                stage: "chrominance",
                encoder: "luminance_encoder",
            },
            &config,
            1,
            2,
            Act::Tanh,
            config.chroma_skips,
        );
        Ok(Self {
            config,
            seed,
            params,
            luminance,
            chrominance,
        })
    }

    pub fn cast<U: Real>(&self) -> ShadowTransferModel<U> {
        ShadowTransferModel {
            config: self.config.clone(),
            seed: self.seed,
            params: self.params.cast(),
            luminance: self.luminance.clone(),
            chrominance: self.chrominance.clone(),
        }
    }

    fn light(v: &LightVector) -> Result<[T; 2], NetError> {
        if v.0.iter().any(|x| !x.is_finite()) {
            return Err(NetError::NonFiniteLight);
        }
        Ok(v.0.map(T::lit))
    }

    fn check_dims(&self, t: &Tensor<T>, channels: usize) -> Result<(), NetError> {
        if t.height != self.config.height || t.width != self.config.width || t.channels != channels {
            return Err(NetError::Dimensions {
                got_h: t.height,
                got_w: t.width,
                want_h: self.config.height,
                want_w: self.config.width,
            });
        }
        Ok(())
    }

    pub fn light_encode(&self, v: &LightVector, which: LightBranch) -> Result<Vec<T>, NetError> {
        let v = Self::light(v)?;
        let stage = match which {
            LightBranch::Luminance => &self.luminance,
            LightBranch::Chrominance => &self.chrominance,
        };
        Ok(stage.encode_light(self.params.data(), v))
    }

    /// Predicted normalized luminance, `1 x H x W` in `(0, 1)`.
    pub fn luminance_forward(&self, geometry: &Tensor<T>, v: &LightVector) -> Result<Tensor<T>, NetError> {
        self.check_dims(geometry, self.config.geometry_channels())?;
        let c = self.luminance.forward(self.params.data(), geometry, Self::light(v)?);
        Ok(c.head.into_output())
    }

    /// Predicted normalized chrominance, `2 x H x W` in `(-1, 1)`.
    pub fn chrominance_forward(&self, l: &Tensor<T>, v: &LightVector) -> Result<Tensor<T>, NetError> {
        self.check_dims(l, 1)?;
        let c = self.chrominance.forward(self.params.data(), l, Self::light(v)?);
        Ok(c.head.into_output())
    }

    pub fn forward(&self, geometry: &Tensor<T>, v: &LightVector) -> Result<Prediction<T>, NetError> {
        self.forward_linked(geometry, v, StageLink::Connected)
    }

    pub fn forward_linked(&self, geometry: &Tensor<T>, v: &LightVector, link: StageLink) -> Result<Prediction<T>, NetError> {
        let cache = self.forward_train(geometry, v, link)?;
        let l = cache.l().clone();
        let ab = cache.ab().clone();
        let rgb = compose_rgb_image(&l, &ab);
        Ok(Prediction { l, ab, rgb })
    }

    pub fn forward_train(&self, geometry: &Tensor<T>, v: &LightVector, link: StageLink) -> Result<ForwardCache<T>, NetError> {
        self.check_dims(geometry, self.config.geometry_channels())?;
        let v = Self::light(v)?;
        let p = self.params.data();
        let lum = self.luminance.forward(p, geometry, v);
        let chroma_in = match link {
            StageLink::Connected => lum.head.output().clone(),
            StageLink::Severed => Tensor::zeros(1, geometry.height, geometry.width),
        };
        let chroma = self.chrominance.forward(p, &chroma_in, v);
        Ok(ForwardCache { lum, chroma, link })
    }

    /// Accumulates parameter gradients of a loss given its gradients w.r.t.
    /// the normalized `L'` and `a'b'` outputs. `dl` must already contain any
    /// direct luminance term; the chrominance stage's input gradient is added.
    pub fn backward(&self, cache: &ForwardCache<T>, mut dl: Tensor<T>, dab: Tensor<T>, grads: &mut [T]) {
        let p = self.params.data();
        let need = cache.link == StageLink::Connected;
        if let Some(dl_chroma) = self.chrominance.backward(p, &cache.chroma, dab, grads, need) {
            dl.add_assign(&dl_chroma);
        }
        self.luminance.backward(p, &cache.lum, dl, grads, false);
    }

    /// Names of parameters belonging to each stage, for inspection.
    pub fn stage_of(name: &str) -> Option<LightBranch> {
        if name.starts_with("luminance.") {
            Some(LightBranch::Luminance)
        } else if name.starts_with("chrominance.") {
            Some(LightBranch::Chrominance)
        } else {
            None
        }
    }
}

/// Per-pixel Lab -> RGB Jacobians w.r.t. the normalized channels.
pub struct RgbJacobian<T> {
    jac: Vec<[[T; 3]; 3]>,
    height: usize,
    width: usize,
}

/// Differentiable `(L', a'b') -> RGB` in the network's float type.
pub fn compose_rgb<T: Real>(l: &Tensor<T>, ab: &Tensor<T>) -> (Tensor<T>, RgbJacobian<T>) {
    let n = l.plane();
    let mut rgb = Tensor::zeros(3, l.height, l.width);
    let mut jac = Vec::with_capacity(n);
    let (ls, abs) = (T::lit(L_SCALE), T::lit(AB_SCALE));
    for i in 0..n {
        let lab = [l.data[i] * ls, ab.data[i] * abs, ab.data[n + i] * abs];
        let (px, mut j) = colorspace::lab_to_rgb_jacobian(lab);
        for (c, row) in j.iter_mut().enumerate() {
            rgb.data[c * n + i] = px[c];
            row[0] = row[0] * ls;
            row[1] = row[1] * abs;
            row[2] = row[2] * abs;
        }
        jac.push(j);
    }
    (
        rgb,
        RgbJacobian {
            jac,
            height: l.height,
            width: l.width,
        },
    )
}

impl<T: Real> RgbJacobian<T> {
    /// Pulls an RGB gradient back to `(dL', da'b')`.
    pub fn backward(&self, drgb: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let n = self.height * self.width;
        let mut dl = Tensor::zeros(1, self.height, self.width);
        let mut dab = Tensor::zeros(2, self.height, self.width);
        for (i, j) in self.jac.iter().enumerate() {
            let g = [drgb.data[i], drgb.data[n + i], drgb.data[2 * n + i]];
            dl.data[i] = g[0] * j[0][0] + g[1] * j[1][0] + g[2] * j[2][0];
            dab.data[i] = g[0] * j[0][1] + g[1] * j[1][1] + g[2] * j[2][1];
            dab.data[n + i] = g[0] * j[0][2] + g[1] * j[1][2] + g[2] * j[2][2];
        }
        (dl, dab)
    }
}

/// Display path: denormalize, convert, clamp.
pub fn compose_rgb_image<T: Real>(l: &Tensor<T>, ab: &Tensor<T>) -> RgbImage {
    let lab = colorspace::denormalize_lab(&Tensor::concat(&[l, ab]));
    colorspace::lab_to_srgb(&lab).expect("stage outputs are bounded and finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> NetConfig {
        NetConfig {
            height: 8,
            width: 8,
            classes: 4,
            levels: 2,
            base_width: 4,
            latent_width: 8,
            light_hidden: 6,
            chroma_skips: true,
            inputs: InputMask::default(),
        }
    }

    fn sample_geometry(cfg: &NetConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.height * cfg.width;
        let depth: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..80.0)).collect();
        let sem: Vec<u8> = (0..n).map(|_| rng.gen_range(0..cfg.classes as u8)).collect();
        geometry_input(cfg, &depth, &sem).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        let mut c = tiny();
        c.height = 10;
        assert!(c.validate().is_err());
        c = tiny();
        c.base_width = 0;
        assert!(c.validate().is_err());
        c = tiny();
        c.inputs = InputMask { depth: false, semseg: false };
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let a = ShadowTransferModel::<f32>::init_parameters(tiny(), 3).unwrap();
        let b = ShadowTransferModel::<f32>::init_parameters(tiny(), 3).unwrap();
        let c = ShadowTransferModel::<f32>::init_parameters(tiny(), 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params.data(), c.params.data());
        assert!(a.params.all_finite());
        assert!(a.params.index_of("luminance.geometry_encoder.stem.weight").is_some());
        assert!(a.params.index_of("chrominance.light_encoder.fc2.bias").is_some());
    }

    #[test]
    fn light_encoder_zero_params_and_distinct_outputs() {
        let mut m = ShadowTransferModel::<f64>::init_parameters(tiny(), 1).unwrap();
        let v1 = LightVector([0.2, 0.3]);
        let v2 = LightVector([-0.5, 0.1]);
        let a = m.light_encode(&v1, LightBranch::Luminance).unwrap();
        let b = m.light_encode(&v2, LightBranch::Luminance).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, m.light_encode(&v1, LightBranch::Luminance).unwrap());
        m.params.data_mut().iter_mut().for_each(|v| *v = 0.0);
        assert!(m.light_encode(&v1, LightBranch::Chrominance).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shapes_and_ranges() {
        let cfg = tiny();
        let m = ShadowTransferModel::<f64>::init_parameters(cfg.clone(), 9).unwrap();
        let g = sample_geometry(&cfg, 2);
        let v = LightVector([0.1, 0.4]);
        let l = m.luminance_forward(&g, &v).unwrap();
        assert_eq!(l.shape(), [1, 8, 8]);
        assert!(l.data.iter().all(|&x| x > 0.0 && x < 1.0));
        let ab = m.chrominance_forward(&l, &v).unwrap();
        assert_eq!(ab.shape(), [2, 8, 8]);
        assert!(ab.data.iter().all(|&x| x > -1.0 && x < 1.0));
        let pred = m.forward(&g, &v).unwrap();
        assert_eq!(pred.l, l);
        assert_eq!(pred.ab, ab);
        assert_eq!(pred.rgb, compose_rgb_image(&l, &ab));
        assert!(pred.rgb.data.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn zero_input_is_finite_and_reproducible() {
        let cfg = tiny();
        let m = ShadowTransferModel::<f32>::init_parameters(cfg.clone(), 5).unwrap();
        let g = Tensor::zeros(cfg.geometry_channels(), 8, 8);
        let v = LightVector([0.0, 0.0]);
        let a = m.luminance_forward(&g, &v).unwrap();
        assert!(a.all_finite());
        assert_eq!(a, m.luminance_forward(&g, &v).unwrap());
    }

    #[test]
    fn masked_inputs_are_zeroed() {
        let mut cfg = tiny();
        cfg.inputs = InputMask { depth: true, semseg: false };
        let g = geometry_input::<f64>(&cfg, &[5.0; 64], &[2; 64]).unwrap();
        assert!(g.channel(0).iter().all(|&v| v > 0.0));
        assert!(g.data[64..].iter().all(|&v| v == 0.0));
        cfg.inputs = InputMask { depth: false, semseg: true };
        let g = geometry_input::<f64>(&cfg, &[5.0; 64], &[2; 64]).unwrap();
        assert!(g.channel(0).iter().all(|&v| v == 0.0));
        assert!(g.channel(3).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = ShadowTransferModel::<f32>::init_parameters(tiny(), 5).unwrap();
        let g = Tensor::zeros(5, 16, 8);
        assert!(matches!(
            m.luminance_forward(&g, &LightVector([0.0, 0.0])),
            Err(NetError::Dimensions { .. })
        ));
        assert!(geometry_input::<f32>(&tiny(), &[1.0; 64], &[7; 64]).is_err());
    }

    #[test]
    fn severed_link_makes_ab_ignore_geometry() {
        let cfg = tiny();
        let m = ShadowTransferModel::<f64>::init_parameters(cfg.clone(), 6).unwrap();
        let v = LightVector([0.3, -0.2]);
        let a = m.forward_linked(&sample_geometry(&cfg, 1), &v, StageLink::Severed).unwrap();
        let b = m.forward_linked(&sample_geometry(&cfg, 2), &v, StageLink::Severed).unwrap();
        assert_ne!(a.l, b.l);
        assert_eq!(a.ab, b.ab);
        let c = m.forward(&sample_geometry(&cfg, 1), &v).unwrap();
        let d = m.forward(&sample_geometry(&cfg, 2), &v).unwrap();
        assert_ne!(c.ab, d.ab);
    }

    #[test]
    fn rgb_jacobian_matches_finite_differences() {
        let l = Tensor::from_vec(1, 1, 2, vec![0.55, 0.3]);
        let ab = Tensor::from_vec(2, 1, 2, vec![0.1, -0.2, 0.05, 0.15]);
        let (_, jac) = compose_rgb(&l, &ab);
        let w = Tensor::from_vec(3, 1, 2, vec![0.3, -1.0, 0.7, 0.2, 0.5, -0.4]);
        let (dl, dab) = jac.backward(&w);
        let f = |l: &Tensor<f64>, ab: &Tensor<f64>| -> f64 {
            compose_rgb(l, ab).0.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
        };
        let h = 1e-7;
        for i in 0..2 {
            let (mut lp, mut lm) = (l.clone(), l.clone());
            lp.data[i] += h;
            lm.data[i] -= h;
            assert!(((f(&lp, &ab) - f(&lm, &ab)) / (2.0 * h) - dl.data[i]).abs() < 1e-6);
        }
        for i in 0..4 {
            let (mut ap, mut am) = (ab.clone(), ab.clone());
            ap.data[i] += h;
            am.data[i] -= h;
            assert!(((f(&l, &ap) - f(&l, &am)) / (2.0 * h) - dab.data[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for skips in [true, false] {
            let mut cfg = tiny();
            cfg.chroma_skips = skips;
            let mut m = ShadowTransferModel::<f64>::init_parameters(cfg.clone(), 12).unwrap();
            let g = sample_geometry(&cfg, 4);
            let v = LightVector([0.25, 0.5]);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let wl: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wab: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |m: &ShadowTransferModel<f64>| -> f64 {
                let c = m.forward_train(&g, &v, StageLink::Connected).unwrap();
                c.l().data.iter().zip(&wl).map(|(a, b)| a * b).sum::<f64>()
                    + c.ab().data.iter().zip(&wab).map(|(a, b)| a * b).sum::<f64>()
            };
            let cache = m.forward_train(&g, &v, StageLink::Connected).unwrap();
            let mut grads = m.params.zeros_like();
            m.backward(
                &cache,
                Tensor::from_vec(1, 8, 8, wl.clone()),
                Tensor::from_vec(2, 8, 8, wab.clone()),
                &mut grads,
            );
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for i in (0..m.params.len()).step_by(7) {
                let orig = m.params.data()[i];
                m.params.data_mut()[i] = orig + h;
                let lp = loss(&m);
                m.params.data_mut()[i] = orig - h;
                let lm = loss(&m);
                m.params.data_mut()[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                worst = worst.max((fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6));
            }
            assert!(worst < 1e-4, "skips={skips} worst rel err {worst}");
        }
    }
}
