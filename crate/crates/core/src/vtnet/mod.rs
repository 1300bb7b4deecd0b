//! The VTNet classifier: a GRU over raw samples in parallel with a small
//! CNN over the scanpath image, fused by concatenation.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{ConvSpec, VTNetConfig};
pub use model::{backward, forward, forward_item, predict, predict_input, ModelInput, Prediction};
pub use params::VTNetParams;
pub use train::{fit, train, TrainOutcome};
