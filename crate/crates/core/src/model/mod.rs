mod checkpoint;
mod config;
mod termcast;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{FusionMode, ModelConfig, Variant};
pub use termcast::{fuse, loss, Batch, ForwardOutput, ForwardVars, RelationVector, TermCast, COSINE_EPS};
