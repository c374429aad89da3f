//! Image decoding and resampling, cropping, blur screening, manifests,
//! validation splits, dataset preparation, the synthetic room generator and in-memory datasets.

pub mod blur;
pub mod crop;
pub mod dataset;
pub mod image;
pub mod manifest;
pub mod prep;
pub mod synth;

pub use blur::{blur_indicator, BlurConfig, BlurVerdict};
pub use crop::{crop, crop_at, crop_offsets, CropMode};
pub use dataset::{preprocess, resize_side_for, Dataset};
pub use image::{decode_image, luma, resize_bilinear, write_image, ImageRecord};
pub use manifest::{load_manifest, split_validation, write_manifest, DatasetManifest, ManifestEntry, Split};
pub use prep::{prepare, PrepConfig, PrepOutput, PrepRow};
pub use synth::{render_room, synth_generate, RoomRecipe, Texture};
