//! In-memory splits and the deterministic epoch batcher.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng;
use crate::tensor::Tensor;

use super::augment::{augment, AugmentConfig};
use super::image::{load_image, IMAGE_SIZE};
use super::manifest::{DatasetManifest, Label, Split};

/// A decoded `[3, 64, 64]` image with its label.
#[derive(Clone, Debug)]
pub struct Sample {
    pub pixels: Tensor<f32>,
    pub label: Label,
    pub path: String,
}

#[derive(Clone, Debug)]
pub struct ImageBatch {
    /// `[N, 3, 64, 64]`.
    pub pixels: Tensor<f32>,
    /// Class indices, see [`Label::index`].
    pub labels: Vec<usize>,
    pub paths: Vec<String>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Decodes every image of `split`, keeping manifest order.
pub fn load_split(manifest: &DatasetManifest, split: Split, rescale: f64) -> Result<Vec<Sample>> {
    let records = manifest.records_in(split);
    let decoded = parallel::map_range(records.len(), |i| {
        load_image(&records[i].path, IMAGE_SIZE, rescale)
    });
    records
        .iter()
        .zip(decoded)
        .map(|(r, px)| {
            Ok(Sample {
                pixels: px?,
                label: r.label,
                path: r.path.clone(),
            })
        })
        .collect()
}

/// Owns a split and hands out one deterministic pass per epoch.
///
/// Order and augmentation depend only on the seeds and the epoch number, so
/// a run can be replayed from any epoch.
#[derive(Clone, Debug)]
pub struct Batches {
    samples: Vec<Sample>,
    batch_size: usize,
    shuffle: bool,
    augment: Option<AugmentConfig>,
    seed: u64,
}

impl Batches {
    pub fn new(
        samples: Vec<Sample>,
        batch_size: usize,
        shuffle: bool,
        augment: Option<AugmentConfig>,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if samples.is_empty() {
            return Err(Error::Contract("cannot batch an empty split".into()));
        }
        if let Some(cfg) = &augment {
            cfg.validate()?;
        }
        Ok(Batches {
            samples,
            batch_size,
            shuffle,
            augment,
            seed,
        })
    }

    /// Shuffles and augments only for the training split.
    pub fn for_split(
        samples: Vec<Sample>,
        split: Split,
        batch_size: usize,
        augment: Option<AugmentConfig>,
        seed: u64,
    ) -> Result<Self> {
        let train = split == Split::Train;
        Batches::new(samples, batch_size, train, augment.filter(|_| train), seed)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.batch_size)
    }

    /// Sample order for `epoch`.
    pub fn order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        if self.shuffle {
            order.shuffle(&mut rng::stream(self.seed, &[epoch as u64]));
        }
        order
    }

    pub fn epoch(&self, epoch: usize) -> EpochBatches<'_> {
        EpochBatches {
            source: self,
            order: self.order(epoch),
            epoch,
            cursor: 0,
        }
    }
}

pub struct EpochBatches<'a> {
    source: &'a Batches,
    order: Vec<usize>,
    epoch: usize,
    cursor: usize,
}

impl EpochBatches<'_> {
    fn assemble(&self, idx: &[usize]) -> Result<ImageBatch> {
        let src = self.source;
        let images = parallel::map_range(idx.len(), |k| {
            let s = &src.samples[idx[k]];
            match &src.augment {
                Some(cfg) => {
                    let mut r = rng::stream(cfg.seed, &[self.epoch as u64, idx[k] as u64]);
                    augment(&s.pixels, cfg, &mut r)
                }
                None => Ok(s.pixels.clone()),
            }
        });
        let images = images.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(ImageBatch {
            pixels: Tensor::stack(&images)?,
            labels: idx.iter().map(|&i| src.samples[i].label.index()).collect(),
            paths: idx.iter().map(|&i| src.samples[i].path.clone()).collect(),
        })
    }
}

impl Iterator for EpochBatches<'_> {
    type Item = Result<ImageBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.source.batch_size).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(self.assemble(&idx))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.cursor).div_ceil(self.source.batch_size);
        (left, Some(left))
    }
}

/// Loads `split` from disk and wraps it in a [`Batches`].
pub fn batch_iter(
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    augment: Option<AugmentConfig>,
    seed: u64,
) -> Result<Batches> {
    let rescale = augment
        .map(|a| a.rescale)
        .unwrap_or(super::image::DEFAULT_RESCALE);
    let samples = load_split(manifest, split, rescale)?;
    if samples.is_empty() {
        return Err(Error::Contract(format!("split {split} has no images")));
    }
    Batches::for_split(samples, split, batch_size, augment, seed)
}
