//! Dense tensor kernels, reverse-mode gradients and the Adam optimiser.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{Attention, LayerNorm, Linear, TransformerLayer};
pub use params::{warmup_lr, AdamConfig, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
