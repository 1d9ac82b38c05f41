//! Minimal dense-matrix neural-network toolkit: matrices, a reverse-mode tape,
//! a flat parameter store, and the layers used by the heads and the encoder.

mod layers;
mod matrix;
mod optim;
mod params;
mod tape;

pub use layers::{
    apply_bn_updates, dropout_mask, set_bn_stats, BatchNorm, Block, BnUpdate, Ctx, Linear, Mlp,
    OutputActivation, BN_EPS, BN_MOMENTUM,
};
pub use matrix::Matrix;
pub use optim::Sgd;
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, BatchStats, ConvGeometry, Gradients, Tape, Var};
