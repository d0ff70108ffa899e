//! Torso-anchored text localization in video frame sequences.

pub mod body;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod kmeans;
pub mod overlay;
pub mod pipeline;
pub mod skin;
pub mod synth;
pub mod temporal;
pub mod textdet;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use imaging::{FloatMap, Frame, Rect};
pub use pipeline::{run_pipeline, PipelineOutput};
