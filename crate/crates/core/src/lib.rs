pub mod config;
pub mod curiosity;
pub mod depthpp;
pub mod enhance;
pub mod error;
pub mod features;
pub mod filter;
pub mod fuse;
pub mod io;
pub mod localize;
pub mod metrics;
pub mod overlay;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod rng;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{decode_frame, frame_id, run_pipeline, Frame, RunOutput};
pub use raster::{LumaSat, RasterF32};
pub use report::RunReport;
