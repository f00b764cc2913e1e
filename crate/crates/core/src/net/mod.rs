//! Cross-view elevation model: shared convolutional backbone, ray-direction
//! positional embeddings, history-augmented map-view queries, per-scale
//! cross attention, and a multi-scale decoder with an anchor-relative head.

pub mod checkpoint;
mod config;
mod model;
mod params;
pub mod plan;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use config::{ModelConfig, PosEncoding, UPSAMPLE};
pub use model::{image_tensor, Bound, ElevNet, ForwardVars, FrameInput};
pub use params::{Init, ParamStore};
