//! Dense layers, pointwise activations and the small reshaping ops the
//! encoder-decoders need, each with its backward pass.

use rand::Rng;

use super::params::{ParamStore, Slot};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Slot,
    pub bias: Slot,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, fin: usize, fout: usize) -> Self {
        let weight = store.add_fan_in(format!("{name}.weight"), &[fout, fin], fin, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[fout]);
        Self { weight, bias, fin, fout }
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.fin, "linear input width");
        let w = &params[self.weight.range()];
        let b = &params[self.bias.range()];
        (0..self.fout)
            .map(|o| {
                let row = &w[o * self.fin..(o + 1) * self.fin];
                b[o] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
            })
            .collect()
    }

    pub fn backward<T: Real>(&self, params: &[T], x: &[T], dy: &[T], grads: Option<&mut [T]>) -> Vec<T> {
        if let Some(g) = grads {
            for o in 0..self.fout {
                for i in 0..self.fin {
                    let idx = self.weight.offset + o * self.fin + i;
                    g[idx] = g[idx] + dy[o] * x[i];
                }
                let idx = self.bias.offset + o;
                g[idx] = g[idx] + dy[o];
            }
        }
        let w = &params[self.weight.range()];
        (0..self.fin)
            .map(|i| (0..self.fout).map(|o| w[o * self.fin + i] * dy[o]).sum())
            .collect()
    }
}

/// Pointwise nonlinearities. Backward passes are written in terms of the
/// activation output so only outputs need to be cached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Identity,
    Elu,
    Sigmoid,
    Tanh,
}

impl Act {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Act::Identity => x,
            Act::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Act::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Act::Tanh => x.tanh(),
        }
    }

    /// `d act / d x` expressed through `y = act(x)`.
    #[inline]
    pub fn slope<T: Real>(self, y: T) -> T {
        match self {
            Act::Identity => T::one(),
            Act::Elu => {
                if y > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Act::Sigmoid => y * (T::one() - y),
            Act::Tanh => T::one() - y * y,
        }
    }

    pub fn forward_inplace<T: Real>(self, x: &mut [T]) {
        if self != Act::Identity {
            for v in x {
                *v = self.apply(*v);
            }
        }
    }

    /// `dy <- dy * act'(x)` given the cached outputs `y`.
    pub fn backward_inplace<T: Real>(self, y: &[T], dy: &mut [T]) {
        if self != Act::Identity {
            for (d, &o) in dy.iter_mut().zip(y) {
                *d = *d * self.slope(o);
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height, x.width);
    let mut y = Tensor::zeros(x.channels, 2 * h, 2 * w);
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = y.channel_mut(c);
        for iy in 0..h {
            for ix in 0..w {
                let v = src[iy * w + ix];
                let base = 2 * iy * 2 * w + 2 * ix;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * w] = v;
                dst[base + 2 * w + 1] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = Tensor::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        let src = dy.channel(c);
        let dst = dx.channel_mut(c);
        for iy in 0..h {
            for ix in 0..w {
                let base = 2 * iy * 2 * w + 2 * ix;
                dst[iy * w + ix] = src[base] + src[base + 1] + src[base + 2 * w] + src[base + 2 * w + 1];
            }
        }
    }
    dx
}

/// Repeats a vector over a `h x w` grid, one channel per element.
pub fn broadcast<T: Real>(v: &[T], h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(v.len() * h * w);
    for &x in v {
        data.extend(std::iter::repeat_n(x, h * w));
    }
    Tensor::from_vec(v.len(), h, w, data)
}

pub fn broadcast_backward<T: Real>(dy: &Tensor<T>) -> Vec<T> {
    (0..dy.channels).map(|c| dy.channel(c).iter().copied().sum()).collect()
}

/// Per-channel spatial mean.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let n = T::lit(x.plane() as f64);
    (0..x.channels).map(|c| x.channel(c).iter().copied().sum::<T>() / n).collect()
}

pub fn global_avg_pool_backward<T: Real>(dy: &[T], h: usize, w: usize) -> Tensor<T> {
    let n = T::lit((h * w) as f64);
    let scaled: Vec<T> = dy.iter().map(|&d| d / n).collect();
    broadcast(&scaled, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_slopes_match_finite_differences() {
        for act in [Act::Elu, Act::Sigmoid, Act::Tanh, Act::Identity] {
            for x in [-2.0f64, -0.3, 0.4, 1.7] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.slope(act.apply(x))).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn upsample_adjoint() {
        // <up(x), y> == <x, up^T(y)>
        let x = Tensor::from_vec(2, 2, 3, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect());
        let y = Tensor::from_vec(2, 4, 6, (0..48).map(|v| (v as f64).sin()).collect());
        let lhs: f64 = upsample2(&x).data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&upsample2_backward(&y).data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn linear_zero_params_give_zero() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let lin = Linear::new(&mut store, &mut rng, "l", 2, 3);
        store.data_mut().iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(lin.forward(store.data(), &[0.3, -0.7]), vec![0.0; 3]);
    }
}
