//! Semi-supervised hyperspectral image classification with a contrastive
//! graph convolutional network over superpixel graphs.

pub mod augment;
pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod render;
pub mod superpixel;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
