//! The multimodal pre-training network.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod layers;
pub mod network;
pub mod params;
pub mod patch;

pub use config::{ModelConfig, Normalization};
pub use forward::{text_anchors, visual_anchors, ForwardOptions, RegionForward, StudyForward};
pub use network::{pool_anchor, pool_text_anchor, pool_visual_anchor, Global, Model, Net, RegionInput, StudyInput, TextInput};
pub use params::{Bound, Init, ParamStore};
pub use patch::{dominant_classes, patchify, sample_mask, sinusoidal_1d, sinusoidal_3d, MaskSample, Patches};

/// Edge length of the cubic patches, in voxels.
pub const PATCH: usize = 16;
