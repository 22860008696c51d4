//! Minimal dense-array numerics: row-major f32 matrices, a seeded RNG,
//! MLP predictors with exact reverse-mode gradients, and AdamW.

mod adamw;
mod mlp;
mod rng;
mod tensor;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use mlp::{Activation, ForwardCache, Layer, MlpGrads, MlpParams};
pub use rng::Rng;
pub use tensor::Tensor2;
