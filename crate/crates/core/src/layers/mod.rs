//! Differentiable building blocks: convolution, batch norm, ReLU, pooling,
//! initialization and the optimizer.

pub mod adam;
pub mod bn;
pub mod conv;
pub mod init;
pub mod pool;
pub mod relu;
pub mod tape;

pub use adam::AdamState;
pub use bn::{bn_apply, bn_bwd, bn_fwd, BatchStats, BnGrads, BnParams, Mode};
pub use conv::{conv2d_bwd, conv2d_fwd, ConvGrads, ConvParams};
pub use init::he_init;
pub use pool::{sum_pool2, sum_unpool2, upsample2};
pub use relu::{relu_bwd, relu_fwd};
pub use tape::{LayerId, Saved, Tape};
