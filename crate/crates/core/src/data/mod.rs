//! Dataset scanning, the balanced split, image loading and augmentation.

mod augment;
mod batch;
mod image;
mod manifest;
pub mod synthetic;

pub use self::augment::{apply_affine, augment, AffineParams, AugmentConfig, FillMode};
pub use self::batch::{batch_iter, load_split, Batches, EpochBatches, ImageBatch, Sample};
pub use self::image::{load_image, resize_bilinear, save_png, DEFAULT_RESCALE, IMAGE_SIZE};
pub use self::manifest::{
    scan_dataset, split_dataset, DatasetManifest, Label, ManifestRecord, RawManifest, RawRecord,
    SkippedFile, Split, SplitCounts,
};
