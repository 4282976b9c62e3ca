//! IDX file reader for the MNIST distribution files.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array4};

use super::ExampleBatch;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load { path: path.to_path_buf(), reason: reason.into() }
}

fn read_images(path: &Path) -> Result<Array4<f32>> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e.to_string()))?;
    if bytes.len() < 16 {
        return Err(load_err(path, "file shorter than IDX image header"));
    }
    let magic = read_u32_be(&bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(load_err(path, format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = read_u32_be(&bytes, 4) as usize;
    let h = read_u32_be(&bytes, 8) as usize;
    let w = read_u32_be(&bytes, 12) as usize;
    let expected = 16 + count * h * w;
    if bytes.len() != expected {
        return Err(load_err(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let pixels: Vec<f32> = bytes[16..].iter().map(|&p| p as f32 / 255.0).collect();
    Array4::from_shape_vec((count, h, w, 1), pixels)
        .map_err(|e| load_err(path, format!("shape error: {e}")))
}

fn read_labels(path: &Path, expected_count: usize) -> Result<Array1<u8>> {
    let bytes = fs::read(path).map_err(|e| load_err(path, e.to_string()))?;
    if bytes.len() < 8 {
        return Err(load_err(path, "file shorter than IDX label header"));
    }
    let magic = read_u32_be(&bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(load_err(path, format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let count = read_u32_be(&bytes, 4) as usize;
    if bytes.len() != 8 + count {
        return Err(load_err(path, format!("expected {} bytes, found {}", 8 + count, bytes.len())));
    }
    if count != expected_count {
        return Err(load_err(path, format!("{count} labels for {expected_count} images")));
    }
    let labels = Array1::from_vec(bytes[8..].to_vec());
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(load_err(path, format!("label {bad} out of range 0..=9")));
    }
    Ok(labels)
}

/// Loads the four standard MNIST files from `dir`, returning the full
/// (train, test) pools.
pub fn load_mnist(dir: &Path) -> Result<(ExampleBatch, ExampleBatch)> {
    let file = |name: &str| -> PathBuf { dir.join(name) };
    let train_images = read_images(&file("train-images-idx3-ubyte"))?;
    let train_labels = read_labels(&file("train-labels-idx1-ubyte"), train_images.dim().0)?;
    let test_images = read_images(&file("t10k-images-idx3-ubyte"))?;
    let test_labels = read_labels(&file("t10k-labels-idx1-ubyte"), test_images.dim().0)?;
    Ok((
        ExampleBatch::new(train_images, train_labels)?,
        ExampleBatch::new(test_images, test_labels)?,
    ))
}
