//! Network building blocks and the per-modality stream.

mod blocks;
pub mod checkpoint;
mod config;
mod params;

pub use blocks::{
    conv, dense_aspp_forward, se_res_forward, se_res_forward_traced, stream_forward, SeResOutput, StreamOutput,
};
pub use checkpoint::Checkpoint;
pub use config::{BlockKind, FusionMode, NetworkConfig};
pub use params::{
    init_conv, init_linear, AdaptationParams, BlockParams, ConvParams, DenseAsppBlockParams, FusionHeadParams,
    LinearParams, NetworkParams, SeResBlockParams, StreamParams,
};
