//! Dense networks and their optimizers.

mod adam;
mod mlp;
mod polyak;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use mlp::{MlpNodes, MlpParams, ParamMode};
pub use polyak::polyak_update;
