//! Joint slot-filling and intent-detection network.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod network;
pub mod params;

pub use checkpoint::TrainedModel;
pub use config::{HeadKind, ModelConfig};
pub use network::{
    forward, infer_traces, inject_noise, loss, predict, ForwardTrace, Mode, Prediction,
};
pub use params::{ModelParams, Params};
