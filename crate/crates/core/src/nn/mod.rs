//! Small trainable clean-clip predictor: MLP, time embedding, AdamW, EMA and
//! checkpoint I/O.

pub mod checkpoint;
pub mod embed;
pub mod mlp;
pub mod model;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use embed::{TimeEmbedding, DEFAULT_EMBED_WIDTH};
pub use mlp::{gradient_check, GradCheck, Mlp, Params};
pub use model::{ClipModel, DEFAULT_HIDDEN};
pub use optim::{AdamW, AdamWConfig, Ema};
