//! 2-D convolution as im2col followed by a GEMM.

use rand::Rng;

use super::params::{ParamStore, Slot};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Slot,
    pub bias: Slot,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Unfolded input kept from the forward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    col: Vec<T>,
    in_h: usize,
    in_w: usize,
}

/// Output columns `ox` whose input column `ox * stride + kj - pad` is in range.
fn valid_cols(out: usize, input: usize, stride: usize, kj: usize, pad: usize) -> (usize, usize) {
    let lo = if kj >= pad { 0 } else { (pad - kj).div_ceil(stride) };
    let last = input + pad - 1;
    let hi = if last < kj { 0 } else { ((last - kj) / stride + 1).min(out) };
    (lo.min(hi), hi)
}

impl Conv2d {
    /// Square kernel with "same"-style padding `kernel / 2`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let weight = store.add_fan_in(format!("{name}.weight"), &[cout, cin, kernel, kernel], fan_in, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[cout]);
        Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn im2col<T: Real>(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        if k == 1 && s == 1 {
            return x.data.clone();
        }
        let (h, w) = (x.height, x.width);
        let n = oh * ow;
        let mut col = vec![T::zero(); self.cin * k * k * n];
        for c in 0..self.cin {
            let plane = x.channel(c);
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * n..(row + 1) * n];
                    let (x0, x1) = valid_cols(ow, w, s, kj, p);
                    for oy in 0..oh {
                        let iy = oy * s + ki;
                        if iy < p || iy - p >= h {
                            continue;
                        }
                        let src = &plane[(iy - p) * w..(iy - p + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let start = x0 + kj - p;
                            drow[x0..x1].copy_from_slice(&src[start..start + (x1 - x0)]);
                        } else {
                            for ox in x0..x1 {
                                drow[ox] = src[ox * s + kj - p];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Real>(&self, dcol: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        if k == 1 && s == 1 {
            return Tensor::from_vec(self.cin, h, w, dcol.to_vec());
        }
        let n = oh * ow;
        let mut dx = Tensor::zeros(self.cin, h, w);
        for c in 0..self.cin {
            let plane = dx.channel_mut(c);
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &dcol[row * n..(row + 1) * n];
                    let (x0, x1) = valid_cols(ow, w, s, kj, p);
                    for oy in 0..oh {
                        let iy = oy * s + ki;
                        if iy < p || iy - p >= h {
                            continue;
                        }
                        let drow = &mut plane[(iy - p) * w..(iy - p + 1) * w];
                        let srow = &src[oy * ow..(oy + 1) * ow];
                        for ox in x0..x1 {
                            let ix = ox * s + kj - p;
                            drow[ix] = drow[ix] + srow[ox];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        assert_eq!(x.channels, self.cin, "conv input channels");
        let (oh, ow) = self.out_size(x.height, x.width);
        let n = oh * ow;
        let kdim = self.cin * self.kernel * self.kernel;
        let col = self.im2col(x, oh, ow);
        let w = &params[self.weight.range()];
        let b = &params[self.bias.range()];
        let mut y = Vec::with_capacity(self.cout * n);
        for &bias in b {
            y.extend(std::iter::repeat_n(bias, n));
        }
        T::gemm(self.cout, kdim, n, T::one(), w, kdim as isize, 1, &col, n as isize, 1, T::one(), &mut y, n as isize, 1);
        (
            Tensor::from_vec(self.cout, oh, ow, y),
            ConvCache {
                col,
                in_h: x.height,
                in_w: x.width,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns
    /// the input gradient when `need_dx`.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        grads: Option<&mut [T]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (oh, ow) = (dy.height, dy.width);
        let n = oh * ow;
        let kdim = self.cin * self.kernel * self.kernel;
        if let Some(g) = grads {
            let (gw, gb) = if self.weight.offset < self.bias.offset {
                let (a, b) = g.split_at_mut(self.bias.offset);
                (&mut a[self.weight.range()], &mut b[..self.bias.len])
            } else {
                let (a, b) = g.split_at_mut(self.weight.offset);
                (&mut b[..self.weight.len], &mut a[self.bias.range()])
            };
            T::gemm(self.cout, n, kdim, T::one(), &dy.data, n as isize, 1, &cache.col, 1, n as isize, T::one(), gw, kdim as isize, 1);
            for (o, gbo) in gb.iter_mut().enumerate() {
                *gbo = *gbo + dy.data[o * n..(o + 1) * n].iter().copied().sum::<T>();
            }
        }
        if !need_dx {
            return None;
        }
        let w = &params[self.weight.range()];
        let mut dcol = vec![T::zero(); kdim * n];
        T::gemm(kdim, self.cout, n, T::one(), w, 1, kdim as isize, &dy.data, n as isize, 1, T::zero(), &mut dcol, n as isize, 1);
        Some(self.col2im(&dcol, cache.in_h, cache.in_w, oh, ow))
    }
}
