//! Cube and label file formats, dataset manifests, and the labeled split.

mod cube;
mod manifest;
mod split;

pub use cube::{HsiCube, LabelMap};
pub use manifest::{presets, protocol_quota, DatasetManifest, FULL_QUOTA, REDUCED_QUOTA};
pub use split::{label_matrix, sample_split, validation_count, SplitSpec};
