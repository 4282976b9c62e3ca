//! CIFAR-10 binary batch reader.
//!
//! Each record is 1 label byte followed by 3072 pixel bytes stored as three
//! 32x32 channel planes (R, G, B); records are converted to HWC layout.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array4};

use super::ExampleBatch;
use crate::error::{Error, Result};

const RECORD_LEN: usize = 1 + 3 * 32 * 32;

fn read_batch_file(path: &Path, images: &mut Vec<f32>, labels: &mut Vec<u8>) -> Result<usize> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Load { path: path.to_path_buf(), reason: e.to_string() })?;
    if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
        return Err(Error::Load {
            path: path.to_path_buf(),
            reason: format!("size {} is not a multiple of the {RECORD_LEN}-byte record", bytes.len()),
        });
    }
    let count = bytes.len() / RECORD_LEN;
    for rec in bytes.chunks_exact(RECORD_LEN) {
        let label = rec[0];
        if label > 9 {
            return Err(Error::Load {
                path: path.to_path_buf(),
                reason: format!("label {label} out of range 0..=9"),
            });
        }
        labels.push(label);
        let planes = &rec[1..];
        for y in 0..32 {
            for x in 0..32 {
                for ch in 0..3 {
                    images.push(planes[ch * 1024 + y * 32 + x] as f32 / 255.0);
                }
            }
        }
    }
    Ok(count)
}

/// Loads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(ExampleBatch, ExampleBatch)> {
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    let mut train_count = 0;
    for i in 1..=5 {
        train_count +=
            read_batch_file(&dir.join(format!("data_batch_{i}.bin")), &mut train_images, &mut train_labels)?;
    }
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    let test_count = read_batch_file(&dir.join("test_batch.bin"), &mut test_images, &mut test_labels)?;

    let train = ExampleBatch::new(
        Array4::from_shape_vec((train_count, 32, 32, 3), train_images)
            .map_err(|e| Error::Shape(e.to_string()))?,
        Array1::from_vec(train_labels),
    )?;
    let test = ExampleBatch::new(
        Array4::from_shape_vec((test_count, 32, 32, 3), test_images)
            .map_err(|e| Error::Shape(e.to_string()))?,
        Array1::from_vec(test_labels),
    )?;
    Ok((train, test))
}
