//! Forward and backward passes for every layer kind in the network.
//!
//! Each `*_forward` returns its output together with a cache that the
//! matching `*_backward` consumes, so a cache serves exactly one backward pass.

pub mod activation;
pub mod conv;
pub mod fc;
pub mod lrn;
pub mod mlpconv;
pub mod pool;
pub mod softmax;

pub use activation::{
    check_dropout_rate, dropout_backward, dropout_forward, relu_backward, relu_forward, DropoutCache, Mode, ReluCache,
};
pub use conv::{
    conv_backward, conv_backward_view, conv_forward, conv_forward_view, conv_output_size, ConvCache, ConvGrads,
    ConvParams, ConvView,
};
pub use fc::{fc_backward, fc_forward, FcCache, FcGrads};
pub use lrn::{lrn_backward, lrn_forward, LrnCache, LrnParams};
pub use mlpconv::{
    mlpconv_backward, mlpconv_backward_view, mlpconv_forward, mlpconv_forward_view, MlpConvCache, MlpConvGrads,
    MlpConvParams, MlpConvView,
};
pub use pool::{
    gap_backward, gap_forward, maxpool_backward, maxpool_forward, pool_output_size, GapCache, MaxPoolCache,
};
pub use softmax::{softmax, softmax_xent_backward, softmax_xent_forward};

/// Saved forward state of one layer.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    MlpConv(MlpConvCache<T>),
    Conv(ConvCache<T>),
    MaxPool(MaxPoolCache),
    Gap(GapCache),
    Fc(FcCache<T>),
    Relu(ReluCache),
    Dropout(DropoutCache<T>),
    Lrn(LrnCache<T>),
}
