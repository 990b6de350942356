//! Per-pixel guidance predictor: maps denoiser features and a time encoding
//! to target-map values.

mod mlp;
mod time;
mod train;

pub use mlp::{InputMode, Lgp, LgpConfig, LossKind};
pub use time::{time_encoding, TimeEncoding, PE_LEVELS, TIME_DIMS};
pub use train::{lgp_error_curve, lgp_train, LgpExample, LgpTrainConfig};
