//! Eye-tracking classification toolkit: recording ingestion, cyclic
//! splitting and scanpath rendering, a GRU + CNN classifier trained with
//! hand-written gradients, grouped cross-validation and synthetic cohorts.

pub mod baselines;
pub mod error;
pub mod evalharness;
pub mod gazedata;
pub mod gradcore;
pub mod gradsuite;
pub mod preprocess;
pub mod seed;
pub mod synthgen;
pub mod vtnet;

pub use error::{Error, Result};
pub use gazedata::{DatasetManifest, Label, RawSample, Recording, Task};
pub use preprocess::{Datapoint, DatapointOptions, Sequence};
pub use vtnet::{VTNetConfig, VTNetParams};
