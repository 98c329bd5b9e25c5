//! Hand-written layers with explicit forward caches and backward passes.

pub mod conv;
pub mod layers;
pub mod optim;
pub mod params;

pub use conv::{Conv2d, ConvCache};
pub use layers::{Act, Linear};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamEntry, ParamStore, Slot};

use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Convolution followed by a pointwise activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub act: Act,
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    conv: ConvCache<T>,
    out: Tensor<T>,
}

impl<T> BlockCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.out
    }

    pub fn into_output(self) -> Tensor<T> {
        self.out
    }
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        act: Act,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, rng, name, cin, cout, kernel, stride),
            act,
        }
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> BlockCache<T> {
        let (mut out, conv) = self.conv.forward(params, x);
        self.act.forward_inplace(&mut out.data);
        BlockCache { conv, out }
    }

    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cache: &BlockCache<T>,
        mut dy: Tensor<T>,
        grads: Option<&mut [T]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        self.act.backward_inplace(&cache.out.data, &mut dy.data);
        self.conv.backward(params, &cache.conv, &dy, grads, need_dx)
    }
}
