//! Image files, LR/HR pairs, dataset directories and checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod pair;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use dataset::{load_dataset, DatasetManifest, Layout, ManifestEntry};
pub use image::{load_image, save_image};
pub use pair::{bicubic_resize, crop_pair, crop_pair_at, make_pair, ImagePair};
