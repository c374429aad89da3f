//! MLPconv: a convolution followed by a two-stage pointwise micro-network,
//! with a ReLU after each stage.

use super::activation::{relu_backward, relu_forward, ReluCache};
use super::conv::{conv_backward_view, conv_forward_view, ConvCache, ConvParams, ConvView};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConvParams<T = f32> {
    pub base: ConvParams<T>,
    pub mlp1: ConvParams<T>,
    pub mlp2: ConvParams<T>,
}

impl<T: Real> MlpConvParams<T> {
    pub fn new(base: ConvParams<T>, mlp1: ConvParams<T>, mlp2: ConvParams<T>) -> Result<Self> {
        for (name, stage) in [("mlp1", &mlp1), ("mlp2", &mlp2)] {
            if !stage.is_pointwise() {
                return Err(Error::invalid(format!(
                    "{name} must be a 1×1 convolution with stride 1 and no padding"
                )));
            }
        }
        if mlp1.in_channels() != base.out_channels() || mlp2.in_channels() != mlp1.out_channels() {
            return Err(Error::invalid(format!(
                "mlpconv channel chain broken: base out {}, mlp1 {}→{}, mlp2 {}→{}",
                base.out_channels(),
                mlp1.in_channels(),
                mlp1.out_channels(),
                mlp2.in_channels(),
                mlp2.out_channels()
            )));
        }
        Ok(Self { base, mlp1, mlp2 })
    }

    pub fn out_channels(&self) -> usize {
        self.mlp2.out_channels()
    }

    pub fn view(&self) -> MlpConvView<'_, T> {
        MlpConvView {
            base: self.base.view(),
            mlp1: self.mlp1.view(),
            mlp2: self.mlp2.view(),
        }
    }
}

/// Borrowed MLPconv parameters.
#[derive(Clone, Copy, Debug)]
pub struct MlpConvView<'a, T> {
    pub base: ConvView<'a, T>,
    pub mlp1: ConvView<'a, T>,
    pub mlp2: ConvView<'a, T>,
}

#[derive(Clone, Debug)]
pub struct MlpConvCache<T> {
    base: ConvCache<T>,
    relu0: ReluCache,
    mlp1: ConvCache<T>,
    relu1: ReluCache,
    mlp2: ConvCache<T>,
    relu2: ReluCache,
}

#[derive(Clone, Debug)]
pub struct MlpConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    /// `(dkernels, dbias)` per stage.
    pub base: (Tensor<T>, Tensor<T>),
    pub mlp1: (Tensor<T>, Tensor<T>),
    pub mlp2: (Tensor<T>, Tensor<T>),
}

pub fn mlpconv_forward<T: Real>(x: &Tensor<T>, p: &MlpConvParams<T>) -> Result<(Tensor<T>, MlpConvCache<T>)> {
    mlpconv_forward_view(x, p.view())
}

pub fn mlpconv_forward_view<T: Real>(x: &Tensor<T>, p: MlpConvView<'_, T>) -> Result<(Tensor<T>, MlpConvCache<T>)> {
    let (z0, base) = conv_forward_view(x, p.base)?;
    let (a0, relu0) = relu_forward(&z0);
    let (z1, mlp1) = conv_forward_view(&a0, p.mlp1)?;
    let (a1, relu1) = relu_forward(&z1);
    let (z2, mlp2) = conv_forward_view(&a1, p.mlp2)?;
    let (y, relu2) = relu_forward(&z2);
    Ok((
        y,
        MlpConvCache {
            base,
            relu0,
            mlp1,
            relu1,
            mlp2,
            relu2,
        },
    ))
}

pub fn mlpconv_backward<T: Real>(
    dy: &Tensor<T>,
    cache: MlpConvCache<T>,
    p: &MlpConvParams<T>,
) -> Result<MlpConvGrads<T>> {
    mlpconv_backward_view(dy, cache, p.view(), true)
}

/// Backward through all three stages; `dx` is computed only when `want_dx`.
pub fn mlpconv_backward_view<T: Real>(
    dy: &Tensor<T>,
    cache: MlpConvCache<T>,
    p: MlpConvView<'_, T>,
    want_dx: bool,
) -> Result<MlpConvGrads<T>> {
    let dz2 = relu_backward(dy, cache.relu2)?;
    let (da1, k2, b2) = conv_backward_view(&dz2, cache.mlp2, p.mlp2, true)?;
    let dz1 = relu_backward(&da1.expect("requested"), cache.relu1)?;
    let (da0, k1, b1) = conv_backward_view(&dz1, cache.mlp1, p.mlp1, true)?;
    let dz0 = relu_backward(&da0.expect("requested"), cache.relu0)?;
    let (dx, k0, b0) = conv_backward_view(&dz0, cache.base, p.base, want_dx)?;
    Ok(MlpConvGrads {
        dx,
        base: (k0, b0),
        mlp1: (k1, b1),
        mlp2: (k2, b2),
    })
}
