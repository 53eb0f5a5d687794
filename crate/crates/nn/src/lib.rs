//! Architectural units of the detector: the conv+norm+SiLU unit, a
//! multi-branch dilated-convolution block, a spatial-pyramid-pooling
//! baseline block, and coordinate attention.

pub mod ca;
pub mod cbs;
pub mod error;
pub mod registry;
pub mod rfb;
pub mod sppcspc;

pub use ca::{attention_maps_export, CaBlock, CaConfig};
pub use cbs::Cbs;
pub use error::{NnError, Result};
pub use registry::{
    conv_weight, he_uniform, BnUpdate, LeafMap, ParamRegistry, BN_EPS, BN_MOMENTUM,
};
pub use rfb::{RfbBlock, RfbConfig};
pub use sppcspc::SppcspcBlock;
