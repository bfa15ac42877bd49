pub mod channelcodec;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod featurecodec;
pub mod fusion;
pub mod link;
pub mod metrics;
pub mod nn;
pub mod pcdata;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
