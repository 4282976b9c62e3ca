//! Dataset loading, normalization, splitting and augmentation.
//!
//! Images are held as `[count, height, width, channels]` arrays of `f32`
//! scaled to `[0, 1]`; labels are `u8` class indices. MNIST is stored with
//! one channel so both datasets share a single representation.

mod cifar;
mod idx;

use std::path::Path;

use ndarray::{Array1, Array4, Axis};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};

/// A batch of labelled images with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ExampleBatch {
    pub images: Array4<f32>,
    pub labels: Array1<u8>,
}

impl ExampleBatch {
    /// Validates the batch invariants: one label per image and every pixel
    /// value inside `[0, 1]`.
    pub fn new(images: Array4<f32>, labels: Array1<u8>) -> Result<Self> {
        if images.dim().0 != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.dim().0,
                labels.len()
            )));
        }
        if let Some(v) = images.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ExampleBatch { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-example shape `(height, width, channels)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.images.dim();
        (h, w, c)
    }

    /// Copy of the examples at `indices` (for minibatching and subsets).
    pub fn select(&self, indices: &[usize]) -> ExampleBatch {
        ExampleBatch {
            images: self.images.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
        }
    }

    /// The first `n` examples.
    pub fn take(&self, n: usize) -> ExampleBatch {
        let n = n.min(self.len());
        ExampleBatch {
            images: self.images.slice(ndarray::s![..n, .., .., ..]).to_owned(),
            labels: self.labels.slice(ndarray::s![..n]).to_owned(),
        }
    }
}

/// Disjoint train/validation/test splits of one dataset.
#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub train: ExampleBatch,
    pub validation: ExampleBatch,
    pub test: ExampleBatch,
    pub num_classes: usize,
}

/// Augmentation applied during classifier training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPolicy {
    #[default]
    None,
    /// Random shift of up to 10% of the image size (zero-padded) plus an
    /// independent 50% horizontal flip, per image.
    ShiftFlip,
}

impl std::str::FromStr for AugmentPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentPolicy::None),
            "shift_flip" => Ok(AugmentPolicy::ShiftFlip),
            other => Err(Error::Config(format!("unknown augmentation policy `{other}`"))),
        }
    }
}

/// Loads a dataset by id (`mnist` or `cifar10`) from `source_dir`, scales
/// pixels to `[0, 1]` and carves deterministic splits.
///
/// Train and validation are drawn without overlap from the training files;
/// the test split is drawn from the test file. Both draws shuffle indices
/// with the given seed before taking prefixes, so the same seed yields
/// byte-identical splits.
pub fn load_dataset(
    name: &str,
    source_dir: &Path,
    split_sizes: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplits> {
    let (train_pool, test_pool, num_classes) = match name {
        "mnist" => {
            let pools = idx::load_mnist(source_dir)?;
            (pools.0, pools.1, 10)
        }
        "cifar10" => {
            let pools = cifar::load_cifar10(source_dir)?;
            (pools.0, pools.1, 10)
        }
        other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
    };

    let (train_n, val_n, test_n) = split_sizes;
    if train_n + val_n > train_pool.len() {
        return Err(Error::SplitSize {
            requested: train_n + val_n,
            available: train_pool.len(),
            split: "train+validation",
        });
    }
    if test_n > test_pool.len() {
        return Err(Error::SplitSize { requested: test_n, available: test_pool.len(), split: "test" });
    }

    let mut rng = StdRng::seed_from_u64(seed);
    let mut train_idx: Vec<usize> = (0..train_pool.len()).collect();
    train_idx.shuffle(&mut rng);
    let mut test_idx: Vec<usize> = (0..test_pool.len()).collect();
    test_idx.shuffle(&mut rng);

    Ok(DatasetSplits {
        train: train_pool.select(&train_idx[..train_n]),
        validation: train_pool.select(&train_idx[train_n..train_n + val_n]),
        test: test_pool.select(&test_idx[..test_n]),
        num_classes,
    })
}

/// Applies an augmentation policy to a batch. Output shape equals input
/// shape and values stay in `[0, 1]`.
pub fn augment(batch: &ExampleBatch, policy: AugmentPolicy, rng: &mut StdRng) -> ExampleBatch {
    match policy {
        AugmentPolicy::None => batch.clone(),
        AugmentPolicy::ShiftFlip => {
            let (b, h, w, c) = batch.images.dim();
            let max_dy = (h / 10) as isize;
            let max_dx = (w / 10) as isize;
            let mut out = Array4::<f32>::zeros((b, h, w, c));
            for n in 0..b {
                let dy = rng.gen_range(-max_dy..=max_dy);
                let dx = rng.gen_range(-max_dx..=max_dx);
                let flip = rng.gen_bool(0.5);
                let src = batch.images.index_axis(Axis(0), n);
                let mut dst = out.index_axis_mut(Axis(0), n);
                for y in 0..h as isize {
                    let sy = y - dy;
                    if sy < 0 || sy >= h as isize {
                        continue; // zero padding
                    }
                    for x in 0..w as isize {
                        let sx0 = x - dx;
                        if sx0 < 0 || sx0 >= w as isize {
                            continue;
                        }
                        let sx = if flip { w as isize - 1 - sx0 } else { sx0 };
                        for ch in 0..c {
                            dst[(y as usize, x as usize, ch)] = src[(sy as usize, sx as usize, ch)];
                        }
                    }
                }
            }
            ExampleBatch { images: out, labels: batch.labels.clone() }
        }
    }
}
