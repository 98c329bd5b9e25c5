//! Training losses and the two fixed feature networks they are measured in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::RgbImage;
use crate::network::compose_rgb;
use crate::nn::layers::{global_avg_pool, global_avg_pool_backward};
use crate::nn::{Act, BlockCache, ConvBlock, Linear, ParamStore};
use crate::solarpos::LightVector;
use crate::tensor::{Real, Tensor};

/// Seed of the default random-weight feature extractor.
pub const FEATURE_SEED: u64 = 0x0fea_7e5e;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape([usize; 3], [usize; 3]),
    #[error("unknown feature tap '{0}'")]
    UnknownTap(String),
    #[error("sun-estimation loss weighted but no sun estimator supplied")]
    MissingSunEst,
    #[error("parameter set does not match the network layout: {0}")]
    Layout(String),
}

fn check_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(), LossError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(LossError::Shape(a.shape(), b.shape()))
    }
}

/// A plain chain of conv blocks whose outputs can be tapped by name.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    blocks: Vec<ConvBlock>,
    names: Vec<String>,
}

impl FeatureStack {
    fn build<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, prefix: &str, layers: &[(usize, usize, usize)]) -> Self {
        let mut blocks = Vec::new();
        let mut names = Vec::new();
        for (i, &(cin, cout, stride)) in layers.iter().enumerate() {
            let name = format!("block{}", i + 1);
            blocks.push(ConvBlock::new(store, rng, &format!("{prefix}.{name}"), cin, cout, 3, stride, Act::Elu));
            names.push(name);
        }
        Self { blocks, names }
    }

    pub fn tap_names(&self) -> &[String] {
        &self.names
    }

    pub fn tap_index(&self, name: &str) -> Result<usize, LossError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| LossError::UnknownTap(name.to_string()))
    }

    fn taps(&self, names: &[String]) -> Result<Vec<usize>, LossError> {
        names.iter().map(|n| self.tap_index(n)).collect()
    }

    /// Runs blocks `0..=upto`.
    fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>, upto: usize) -> Vec<BlockCache<T>> {
        let mut caches: Vec<BlockCache<T>> = Vec::with_capacity(upto + 1);
        for b in &self.blocks[..=upto] {
            let c = b.forward(p, caches.last().map_or(x, |c| c.output()));
            caches.push(c);
        }
        caches
    }

    /// `tap_grads[i]` is the gradient arriving at block `i`'s output.
    fn backward<T: Real>(
        &self,
        p: &[T],
        caches: &[BlockCache<T>],
        mut tap_grads: Vec<Option<Tensor<T>>>,
        mut grads: Option<&mut [T]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut dcur: Option<Tensor<T>> = None;
        for i in (0..caches.len()).rev() {
            if let Some(g) = tap_grads.get_mut(i).and_then(Option::take) {
                dcur = Some(match dcur {
                    Some(mut d) => {
                        d.add_assign(&g);
                        d
                    }
                    None => g,
                });
            }
            if let Some(d) = dcur.take() {
                dcur = self.blocks[i].backward(p, &caches[i], d, grads.as_deref_mut(), need_dx || i > 0);
            }
        }
        dcur
    }
}

/// Fixed-weight conv stack that defines the perceptual and style spaces.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T> {
    params: ParamStore<T>,
    stack: FeatureStack,
    seed: u64,
}

impl<T: Real> FeatureExtractor<T> {
    const LAYERS: [(usize, usize, usize); 3] = [(3, 8, 1), (8, 16, 2), (16, 32, 2)];

    /// Random fan-in scaled weights from `seed`.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let stack = FeatureStack::build(&mut params, &mut rng, "features", &Self::LAYERS);
        Self { params, stack, seed }
    }

    /// Same layout with externally supplied weights.
    pub fn with_params(params: ParamStore<T>) -> Result<Self, LossError> {
        let template = Self::new(0);
        if template.params.entries() != params.entries() {
            return Err(LossError::Layout("feature extractor".into()));
        }
        Ok(Self { params, ..template })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tap_names(&self) -> &[String] {
        self.stack.tap_names()
    }

    /// Feature maps at the named taps.
    pub fn features(&self, rgb: &Tensor<T>, taps: &[String]) -> Result<Vec<Tensor<T>>, LossError> {
        let idx = self.stack.taps(taps)?;
        let upto = idx.iter().copied().max().unwrap_or(0);
        let caches = self.stack.forward(self.params.data(), rgb, upto);
        Ok(idx.iter().map(|&i| caches[i].output().clone()).collect())
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            params: self.params.cast(),
            stack: self.stack.clone(),
            seed: self.seed,
        }
    }
}

/// Small convolutional sun-position regressor.
#[derive(Clone, Debug)]
pub struct SunEstNet<T> {
    pub params: ParamStore<T>,
    pub seed: u64,
    stack: FeatureStack,
    fc1: Linear,
    fc2: Linear,
}

/// Default taps: the last two conv blocks.
pub fn sunest_taps() -> Vec<String> {
    vec!["block3".into(), "block4".into()]
}

struct SunEstCache<T> {
    convs: Vec<BlockCache<T>>,
    pooled: Vec<T>,
    hidden: Vec<T>,
    out: [T; 2],
}

impl<T: Real> SunEstNet<T> {
    const LAYERS: [(usize, usize, usize); 4] = [(3, 16, 2), (16, 32, 2), (32, 64, 2), (64, 64, 2)];
    const HIDDEN: usize = 32;

    pub fn init_parameters(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let stack = FeatureStack::build(&mut params, &mut rng, "sunest", &Self::LAYERS);
        let width = Self::LAYERS[Self::LAYERS.len() - 1].1;
        let fc1 = Linear::new(&mut params, &mut rng, "sunest.fc1", width, Self::HIDDEN);
        let fc2 = Linear::new(&mut params, &mut rng, "sunest.fc2", Self::HIDDEN, 2);
        Self {
            params,
            seed,
            stack,
            fc1,
            fc2,
        }
    }

    pub fn tap_names(&self) -> &[String] {
        self.stack.tap_names()
    }

    fn run(&self, img: &Tensor<T>) -> SunEstCache<T> {
        let p = self.params.data();
        let convs = self.stack.forward(p, img, self.stack.blocks.len() - 1);
        let pooled = global_avg_pool(convs.last().expect("non-empty stack").output());
        let mut hidden = self.fc1.forward(p, &pooled);
        Act::Elu.forward_inplace(&mut hidden);
        let out = self.fc2.forward(p, &hidden);
        SunEstCache {
            convs,
            pooled,
            hidden,
            out: [out[0], out[1]],
        }
    }

    /// Head output in the light-vector encoding.
    pub fn predict(&self, img: &Tensor<T>) -> LightVector {
        let o = self.run(img).out;
        LightVector([o[0].to_f64().unwrap(), o[1].to_f64().unwrap()])
    }

    /// Squared distance between the head output and `target`; parameter
    /// gradients are accumulated into `grads`.
    pub fn regression_step(&self, img: &Tensor<T>, target: &LightVector, grads: &mut [T]) -> T {
        let c = self.run(img);
        let p = self.params.data();
        let t = target.0.map(T::lit);
        let diff = [c.out[0] - t[0], c.out[1] - t[1]];
        let loss = diff[0] * diff[0] + diff[1] * diff[1];
        let two = T::lit(2.0);
        let dout = [two * diff[0], two * diff[1]];
        let mut dh = self.fc2.backward(p, &c.hidden, &dout, Some(grads));
        Act::Elu.backward_inplace(&c.hidden, &mut dh);
        let dpool = self.fc1.backward(p, &c.pooled, &dh, Some(grads));
        let last = c.convs.last().expect("non-empty stack").output();
        let dlast = global_avg_pool_backward(&dpool, last.height, last.width);
        let mut taps = vec![None; c.convs.len()];
        taps[c.convs.len() - 1] = Some(dlast);
        self.stack.backward(p, &c.convs, taps, Some(grads), false);
        loss
    }

    /// Feature maps at the named taps.
    pub fn features(&self, rgb: &Tensor<T>, taps: &[String]) -> Result<Vec<Tensor<T>>, LossError> {
        let idx = self.stack.taps(taps)?;
        let upto = idx.iter().copied().max().unwrap_or(0);
        let caches = self.stack.forward(self.params.data(), rgb, upto);
        Ok(idx.iter().map(|&i| caches[i].output().clone()).collect())
    }

    /// Rebuilds the layer layout around stored parameters.
    pub fn with_params(seed: u64, params: ParamStore<T>) -> Result<Self, LossError> {
        let template = Self::init_parameters(seed);
        if template.params.entries() != params.entries() {
            return Err(LossError::Layout("sun estimator".into()));
        }
        Ok(Self { params, ..template })
    }

    pub fn cast<U: Real>(&self) -> SunEstNet<U> {
        SunEstNet {
            params: self.params.cast(),
            seed: self.seed,
            stack: self.stack.clone(),
            fc1: self.fc1.clone(),
            fc2: self.fc2.clone(),
        }
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T, LossError> {
    check_shape(pred, target)?;
    let n = T::lit(pred.len() as f64);
    Ok(pred.data.iter().zip(&target.data).map(|(&a, &b)| (a - b).abs()).sum::<T>() / n)
}

fn l1_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, weight: T) -> Tensor<T> {
    let s = weight / T::lit(pred.len() as f64);
    let data = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&a, &b)| {
            if a > b {
                s
            } else if a < b {
                -s
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(pred.channels, pred.height, pred.width, data)
}

/// `F Fᵀ / (C H W)` for a `C x H x W` feature map, row-major `C x C`.
pub fn gram<T: Real>(f: &Tensor<T>) -> Vec<T> {
    let (c, n) = (f.channels, f.plane());
    let s = T::one() / T::lit((c * n) as f64);
    let mut g = vec![T::zero(); c * c];
    T::gemm(c, n, c, s, &f.data, n as isize, 1, &f.data, 1, n as isize, T::zero(), &mut g, c as isize, 1);
    g
}

/// Sum over taps of the per-tap mean squared difference, with gradients
/// w.r.t. the `pred` maps.
fn feature_mse<T: Real>(pred: &[&Tensor<T>], gt: &[&Tensor<T>]) -> (T, Vec<Tensor<T>>) {
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let n = T::lit(p.len() as f64);
        let mut d = Tensor::zeros(p.channels, p.height, p.width);
        let mut sum = T::zero();
        for ((dv, &a), &b) in d.data.iter_mut().zip(&p.data).zip(&g.data) {
            let e = a - b;
            sum = sum + e * e;
            *dv = T::lit(2.0) * e / n;
        }
        total = total + sum / n;
        grads.push(d);
    }
    (total, grads)
}

/// Sum over taps of `||G(pred) - G(gt)||_F^2`, with gradients w.r.t. `pred`.
fn gram_distance<T: Real>(pred: &[&Tensor<T>], gt: &[&Tensor<T>]) -> (T, Vec<Tensor<T>>) {
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(pred.len());
    for (p, g) in pred.iter().zip(gt) {
        let (c, n) = (p.channels, p.plane());
        let gp = gram(p);
        let gg = gram(g);
        let diff: Vec<T> = gp.iter().zip(&gg).map(|(&a, &b)| a - b).collect();
        total = total + diff.iter().map(|&d| d * d).sum::<T>();
        // dL/dF = 4 (Gp - Gg) F / (C H W)
        let s = T::lit(4.0) / T::lit((c * n) as f64);
        let mut d = Tensor::zeros(c, p.height, p.width);
        T::gemm(c, c, n, s, &diff, c as isize, 1, &p.data, n as isize, 1, T::zero(), &mut d.data, n as isize, 1);
        grads.push(d);
    }
    (total, grads)
}

fn rgb_pair<T: Real>(pred: &RgbImage, gt: &RgbImage) -> Result<(Tensor<T>, Tensor<T>), LossError> {
    let (a, b) = (pred.to_tensor::<T>(), gt.to_tensor::<T>());
    check_shape(&a, &b)?;
    Ok((a, b))
}

fn refs<T>(v: &[Tensor<T>]) -> Vec<&Tensor<T>> {
    v.iter().collect()
}

pub fn perceptual_loss<T: Real>(
    pred: &RgbImage,
    gt: &RgbImage,
    f: &FeatureExtractor<T>,
    layers: &[String],
) -> Result<T, LossError> {
    let (a, b) = rgb_pair::<T>(pred, gt)?;
    let (fa, fb) = (f.features(&a, layers)?, f.features(&b, layers)?);
    Ok(feature_mse(&refs(&fa), &refs(&fb)).0)
}

pub fn style_loss<T: Real>(pred: &RgbImage, gt: &RgbImage, f: &FeatureExtractor<T>, layers: &[String]) -> Result<T, LossError> {
    let (a, b) = rgb_pair::<T>(pred, gt)?;
    let (fa, fb) = (f.features(&a, layers)?, f.features(&b, layers)?);
    Ok(gram_distance(&refs(&fa), &refs(&fb)).0)
}

pub fn sunest_regression_loss<T: Real>(net: &SunEstNet<T>, img: &RgbImage, target: &LightVector) -> f64 {
    let o = net.predict(&img.to_tensor::<T>()).0;
    (o[0] - target.0[0]).powi(2) + (o[1] - target.0[1]).powi(2)
}

pub fn sunest_feature_loss<T: Real>(pred: &RgbImage, gt: &RgbImage, net: &SunEstNet<T>) -> Result<T, LossError> {
    let (a, b) = rgb_pair::<T>(pred, gt)?;
    let taps = sunest_taps();
    let (fa, fb) = (net.features(&a, &taps)?, net.features(&b, &taps)?);
    Ok(feature_mse(&refs(&fa), &refs(&fb)).0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub l1_l: f64,
    pub l1_ab: f64,
    pub perceptual: f64,
    pub style: f64,
    pub sunest: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1_l: 1.0,
            l1_ab: 1.0,
            perceptual: 1.0,
            style: 1.0,
            sunest: 1.0,
        }
    }
}

/// Weighted loss components; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1_l: f64,
    pub l1_ab: f64,
    pub perceptual: f64,
    pub style: f64,
    pub sunest: f64,
    pub total: f64,
}

impl LossReport {
    pub fn accumulate(&mut self, o: &LossReport) {
        self.l1_l += o.l1_l;
        self.l1_ab += o.l1_ab;
        self.perceptual += o.perceptual;
        self.style += o.style;
        self.sunest += o.sunest;
        self.total += o.total;
    }

    pub fn scaled(&self, s: f64) -> LossReport {
        LossReport {
            l1_l: self.l1_l * s,
            l1_ab: self.l1_ab * s,
            perceptual: self.perceptual * s,
            style: self.style * s,
            sunest: self.sunest * s,
            total: self.total * s,
        }
    }
}

/// Frozen networks and weighting shared by every loss evaluation.
#[derive(Clone, Debug)]
pub struct LossSetup<'a, T> {
    pub extractor: &'a FeatureExtractor<T>,
    pub sunest: Option<&'a SunEstNet<T>>,
    pub weights: LossWeights,
    pub perceptual_layers: Vec<String>,
    pub style_layers: Vec<String>,
}

/// Default perceptual taps.
pub fn perceptual_taps() -> Vec<String> {
    vec!["block2".into()]
}

/// Default style taps.
pub fn style_taps() -> Vec<String> {
    vec!["block1".into(), "block2".into(), "block3".into()]
}

impl<'a, T: Real> LossSetup<'a, T> {
    pub fn new(extractor: &'a FeatureExtractor<T>, sunest: Option<&'a SunEstNet<T>>, weights: LossWeights) -> Self {
        Self {
            extractor,
            sunest,
            weights,
            perceptual_layers: perceptual_taps(),
            style_layers: style_taps(),
        }
    }
}

/// Ground truth for one sample in the network's normalized Lab plus RGB.
#[derive(Clone, Debug)]
pub struct LossTarget<T> {
    pub l: Tensor<T>,
    pub ab: Tensor<T>,
    pub rgb: Tensor<T>,
}

impl<T: Real> LossTarget<T> {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let lab = crate::colorspace::srgb_to_lab(img).expect("validated image");
        let norm = crate::colorspace::normalize_lab::<T>(&lab);
        let mut parts = norm.split(&[1, 2]);
        let ab = parts.pop().expect("two parts");
        let l = parts.pop().expect("two parts");
        Self {
            l,
            ab,
            rgb: img.to_tensor(),
        }
    }
}

/// Loss value and its gradients w.r.t. the network's `L'` and `a'b'` outputs.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub report: LossReport,
    pub dl: Tensor<T>,
    pub dab: Tensor<T>,
}

fn tap_grads<T: Real>(n: usize, idx: &[usize], grads: Vec<Tensor<T>>) -> Vec<Option<Tensor<T>>> {
    let mut out: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
    for (i, g) in idx.iter().zip(grads) {
        out[*i] = Some(match out[*i].take() {
            Some(mut a) => {
                a.add_assign(&g);
                a
            }
            None => g,
        });
    }
    out
}

fn f(v: impl Real) -> f64 {
    v.to_f64().unwrap()
}

/// Weighted sum of the five terms, differentiated w.r.t. the predictions.
pub fn total_loss<T: Real>(
    setup: &LossSetup<T>,
    pred_l: &Tensor<T>,
    pred_ab: &Tensor<T>,
    target: &LossTarget<T>,
) -> Result<LossGrad<T>, LossError> {
    check_shape(pred_l, &target.l)?;
    check_shape(pred_ab, &target.ab)?;
    let w = setup.weights;
    let mut report = LossReport::default();
    let mut dl = Tensor::zeros(1, pred_l.height, pred_l.width);
    let mut dab = Tensor::zeros(2, pred_l.height, pred_l.width);
    if w.l1_l != 0.0 {
        report.l1_l = w.l1_l * f(l1_loss(pred_l, &target.l)?);
        dl.add_assign(&l1_grad(pred_l, &target.l, T::lit(w.l1_l)));
    }
    if w.l1_ab != 0.0 {
        report.l1_ab = w.l1_ab * f(l1_loss(pred_ab, &target.ab)?);
        dab.add_assign(&l1_grad(pred_ab, &target.ab, T::lit(w.l1_ab)));
    }
    let use_features = w.perceptual != 0.0 || w.style != 0.0;
    let use_sun = w.sunest != 0.0;
    if use_sun && setup.sunest.is_none() {
        return Err(LossError::MissingSunEst);
    }
    if use_features || use_sun {
        let (rgb, jac) = compose_rgb(pred_l, pred_ab);
        let mut drgb = Tensor::zeros(3, rgb.height, rgb.width);
        if use_features {
            let ex = setup.extractor;
            let pidx = ex.stack.taps(&setup.perceptual_layers)?;
            let sidx = ex.stack.taps(&setup.style_layers)?;
            let upto = pidx.iter().chain(&sidx).copied().max().unwrap_or(0);
            let p = ex.params.data();
            let pc = ex.stack.forward(p, &rgb, upto);
            let gc = ex.stack.forward(p, &target.rgb, upto);
            let mut grads = Vec::new();
            let mut idx = Vec::new();
            if w.perceptual != 0.0 {
                let (v, g) = feature_mse(
                    &pidx.iter().map(|&i| pc[i].output()).collect::<Vec<_>>(),
                    &pidx.iter().map(|&i| gc[i].output()).collect::<Vec<_>>(),
                );
                report.perceptual = w.perceptual * f(v);
                for mut t in g {
                    t.scale(T::lit(w.perceptual));
                    grads.push(t);
                }
                idx.extend(&pidx);
            }
            if w.style != 0.0 {
                let (v, g) = gram_distance(
                    &sidx.iter().map(|&i| pc[i].output()).collect::<Vec<_>>(),
                    &sidx.iter().map(|&i| gc[i].output()).collect::<Vec<_>>(),
                );
                report.style = w.style * f(v);
                for mut t in g {
                    t.scale(T::lit(w.style));
                    grads.push(t);
                }
                idx.extend(&sidx);
            }
            let taps = tap_grads(pc.len(), &idx, grads);
            if let Some(d) = ex.stack.backward(p, &pc, taps, None, true) {
                drgb.add_assign(&d);
            }
        }
        if let Some(net) = setup.sunest.filter(|_| use_sun) {
            let idx = net.stack.taps(&sunest_taps())?;
            let upto = idx.iter().copied().max().unwrap_or(0);
            let p = net.params.data();
            let pc = net.stack.forward(p, &rgb, upto);
            let gc = net.stack.forward(p, &target.rgb, upto);
            let (v, mut g) = feature_mse(
                &idx.iter().map(|&i| pc[i].output()).collect::<Vec<_>>(),
                &idx.iter().map(|&i| gc[i].output()).collect::<Vec<_>>(),
            );
            report.sunest = w.sunest * f(v);
            g.iter_mut().for_each(|t| t.scale(T::lit(w.sunest)));
            let taps = tap_grads(pc.len(), &idx, g);
            if let Some(d) = net.stack.backward(p, &pc, taps, None, true) {
                drgb.add_assign(&d);
            }
        }
        let (dl2, dab2) = jac.backward(&drgb);
        dl.add_assign(&dl2);
        dab.add_assign(&dab2);
    }
    report.total = report.l1_l + report.l1_ab + report.perceptual + report.style + report.sunest;
    Ok(LossGrad { report, dl, dab })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(w, h, (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let p = Tensor::from_vec(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(l1_loss(&p, &t).unwrap(), 0.5);
        assert_eq!(l1_loss(&t, &p).unwrap(), 0.5);
        assert_eq!(l1_loss(&p, &p).unwrap(), 0.0);
        assert!(l1_loss(&p, &Tensor::zeros(1, 1, 4)).is_err());
    }

    #[test]
    fn gram_of_constant_map() {
        let c: f64 = 0.6;
        let d: f64 = 0.3;
        let fc = Tensor::filled(1, 3, 5, c);
        let fd = Tensor::filled(1, 3, 5, d);
        let g = gram(&fc);
        assert!((g[0] - c * c).abs() < 1e-15);
        let (v, _) = gram_distance(&[&fc], &[&fd]);
        assert!((v - (c * c - d * d).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Tensor<f64> = Tensor::from_vec(4, 3, 3, (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let g = gram(&f);
        for i in 0..4 {
            for j in 0..4 {
                assert!((g[i * 4 + j] - g[j * 4 + i]).abs() < 1e-15);
            }
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q: f64 = (0..4usize).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| x[i] * g[i * 4 + j] * x[j]).sum();
            assert!(q >= -1e-12);
        }
    }

    #[test]
    fn identical_images_give_zero() {
        let ex = FeatureExtractor::<f64>::new(FEATURE_SEED);
        let sun = SunEstNet::<f64>::init_parameters(2);
        let a = random_image(1, 16, 16);
        assert_eq!(perceptual_loss(&a, &a, &ex, &perceptual_taps()).unwrap(), 0.0);
        assert_eq!(style_loss(&a, &a, &ex, &style_taps()).unwrap(), 0.0);
        assert_eq!(sunest_feature_loss(&a, &a, &sun).unwrap(), 0.0);
        let b = random_image(2, 16, 16);
        assert!(perceptual_loss(&a, &b, &ex, &perceptual_taps()).unwrap() > 0.0);
        let ab = sunest_feature_loss(&a, &b, &sun).unwrap();
        let ba = sunest_feature_loss(&b, &a, &sun).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert_eq!(
            perceptual_loss(&a, &b, &ex, &["conv9".to_string()]),
            Err(LossError::UnknownTap("conv9".into()))
        );
    }

    #[test]
    fn regression_loss_hand_value() {
        let mut net = SunEstNet::<f64>::init_parameters(4);
        net.params.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let img = random_image(5, 16, 16);
        let v = sunest_regression_loss(&net, &img, &LightVector([-1.0 / 3.0, 2.0 / 3.0]));
        assert!((v - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let mut net = SunEstNet::<f64>::init_parameters(6);
        let img = random_image(7, 16, 16).to_tensor::<f64>();
        let target = LightVector([0.2, 0.5]);
        let mut grads = net.params.zeros_like();
        net.regression_step(&img, &target, &mut grads);
        let h = 1e-6;
        for i in (0..net.params.len()).step_by(97) {
            let orig = net.params.data()[i];
            net.params.data_mut()[i] = orig + h;
            let lp = net.regression_step(&img, &target, &mut vec![0.0; grads.len()]);
            net.params.data_mut()[i] = orig - h;
            let lm = net.regression_step(&img, &target, &mut vec![0.0; grads.len()]);
            net.params.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn total_is_sum_and_weights_isolate() {
        let ex = FeatureExtractor::<f64>::new(FEATURE_SEED);
        let sun = SunEstNet::<f64>::init_parameters(2);
        let target = LossTarget::<f64>::from_rgb(&random_image(8, 16, 16));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pl = Tensor::from_vec(1, 16, 16, (0..256).map(|_| rng.gen_range(0.05..0.95)).collect());
        let pab = Tensor::from_vec(2, 16, 16, (0..512).map(|_| rng.gen_range(-0.3..0.3)).collect());
        let setup = LossSetup::new(&ex, Some(&sun), LossWeights::default());
        let r = total_loss(&setup, &pl, &pab, &target).unwrap().report;
        assert!((r.total - (r.l1_l + r.l1_ab + r.perceptual + r.style + r.sunest)).abs() < 1e-15);
        assert!([r.l1_l, r.l1_ab, r.perceptual, r.style, r.sunest].iter().all(|&v| v > 0.0));
        let only_sun = LossWeights {
            l1_l: 0.0,
            l1_ab: 0.0,
            perceptual: 0.0,
            style: 0.0,
            sunest: 1.0,
        };
        let r2 = total_loss(&LossSetup::new(&ex, Some(&sun), only_sun), &pl, &pab, &target).unwrap().report;
        assert_eq!(r2.total, r2.sunest);
        assert_eq!(r2.sunest, r.sunest);
        let self_target = total_loss(&setup, &target.l, &target.ab, &target).unwrap().report;
        assert!(self_target.total < 1e-6, "{self_target:?}");
        assert_eq!(
            total_loss(&LossSetup::new(&ex, None, LossWeights::default()), &pl, &pab, &target).unwrap_err(),
            LossError::MissingSunEst
        );
    }
}
