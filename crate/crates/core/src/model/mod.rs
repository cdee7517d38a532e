//! The conditioned U-Net: a strided-convolution encoder whose blocks are
//! modulated by FiLM, a transposed-convolution decoder with skip
//! connections, and a sigmoid soft mask applied to the input magnitude.

mod config;
mod network;

pub use config::{LossReduction, ModelConfig};
pub use network::{build_model, l1_loss, Cunet, ForwardCache, MaskOutput, Mode};
