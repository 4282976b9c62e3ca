//! Model archives: a directory with a JSON metadata document plus raw
//! little-endian `f32` weight blobs, one per parameter tensor.
//!
//! Loading rebuilds the network from the architecture id, then overlays the
//! stored weights after checking layer structure, blob sizes and the weight
//! fingerprint, so a damaged or mislabelled archive fails loudly instead of
//! being silently reinterpreted.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    build_autoencoder, build_classifier, Autoencoder, AutoencoderArch, Classifier, ClassifierArch,
    ModelMeta,
};
use crate::error::{Error, Result};
use crate::nn::{Layer, Network};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_shape: Option<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct ArchiveMeta {
    format_version: u32,
    kind: String,
    arch: String,
    input_shape: [usize; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(flatten)]
    model: ModelMeta,
    layers: Vec<LayerRecord>,
    weights_sha256: String,
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f32_from_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Archive("weight blob length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Hex SHA-256 over every parameter tensor in layer order.
pub fn network_fingerprint(net: &Network<f32>) -> String {
    let mut hasher = Sha256::new();
    for layer in &net.layers {
        let (w, b): (&Array2<f32>, &Array1<f32>) = match layer {
            Layer::Conv(c) => (&c.weight, &c.bias),
            Layer::Dense(d) => (&d.weight, &d.bias),
            _ => continue,
        };
        hasher.update(f32_bytes(w.as_slice().unwrap()));
        hasher.update(f32_bytes(b.as_slice().unwrap()));
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn save_network(dir: &Path, net: &Network<f32>) -> Result<Vec<LayerRecord>> {
    let weights_dir = dir.join("weights");
    fs::create_dir_all(&weights_dir)?;
    let mut records = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let record = match layer {
            Layer::Conv(c) => {
                let wf = format!("weights/{i:03}_conv.weight.bin");
                let bf = format!("weights/{i:03}_conv.bias.bin");
                fs::write(dir.join(&wf), f32_bytes(c.weight.as_slice().unwrap()))?;
                fs::write(dir.join(&bf), f32_bytes(c.bias.as_slice().unwrap()))?;
                LayerRecord {
                    kind: "conv".into(),
                    weight_file: Some(wf),
                    bias_file: Some(bf),
                    weight_shape: Some([c.weight.nrows(), c.weight.ncols()]),
                }
            }
            Layer::Dense(d) => {
                let wf = format!("weights/{i:03}_dense.weight.bin");
                let bf = format!("weights/{i:03}_dense.bias.bin");
                fs::write(dir.join(&wf), f32_bytes(d.weight.as_slice().unwrap()))?;
                fs::write(dir.join(&bf), f32_bytes(d.bias.as_slice().unwrap()))?;
                LayerRecord {
                    kind: "dense".into(),
                    weight_file: Some(wf),
                    bias_file: Some(bf),
                    weight_shape: Some([d.weight.nrows(), d.weight.ncols()]),
                }
            }
            other => LayerRecord {
                kind: other.kind_name().into(),
                weight_file: None,
                bias_file: None,
                weight_shape: None,
            },
        };
        records.push(record);
    }
    Ok(records)
}

fn load_network_weights(dir: &Path, net: &mut Network<f32>, records: &[LayerRecord]) -> Result<()> {
    if records.len() != net.layers.len() {
        return Err(Error::Archive(format!(
            "archive has {} layers, architecture expects {}",
            records.len(),
            net.layers.len()
        )));
    }
    for (i, (layer, record)) in net.layers.iter_mut().zip(records).enumerate() {
        if layer.kind_name() != record.kind {
            return Err(Error::Archive(format!(
                "layer {i}: archive says `{}`, architecture expects `{}`",
                record.kind,
                layer.kind_name()
            )));
        }
        let (w, b): (&mut Array2<f32>, &mut Array1<f32>) = match layer {
            Layer::Conv(c) => (&mut c.weight, &mut c.bias),
            Layer::Dense(d) => (&mut d.weight, &mut d.bias),
            _ => continue,
        };
        let wf = record
            .weight_file
            .as_ref()
            .ok_or_else(|| Error::Archive(format!("layer {i}: missing weight file entry")))?;
        let bf = record
            .bias_file
            .as_ref()
            .ok_or_else(|| Error::Archive(format!("layer {i}: missing bias file entry")))?;
        let wv = f32_from_bytes(&fs::read(dir.join(wf))?)?;
        if wv.len() != w.len() {
            return Err(Error::Archive(format!(
                "layer {i}: weight blob has {} values, expected {}",
                wv.len(),
                w.len()
            )));
        }
        w.as_slice_mut().unwrap().copy_from_slice(&wv);
        let bv = f32_from_bytes(&fs::read(dir.join(bf))?)?;
        if bv.len() != b.len() {
            return Err(Error::Archive(format!(
                "layer {i}: bias blob has {} values, expected {}",
                bv.len(),
                b.len()
            )));
        }
        b.as_slice_mut().unwrap().copy_from_slice(&bv);
    }
    Ok(())
}

fn write_meta(dir: &Path, meta: &ArchiveMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Archive(format!("metadata serialization failed: {e}")))?;
    fs::write(dir.join("metadata.json"), json)?;
    Ok(())
}

fn read_meta(dir: &Path) -> Result<ArchiveMeta> {
    let path = dir.join("metadata.json");
    let json = fs::read_to_string(&path)
        .map_err(|e| Error::Archive(format!("{}: {e}", path.display())))?;
    let meta: ArchiveMeta = serde_json::from_str(&json)
        .map_err(|e| Error::Archive(format!("{}: {e}", path.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Archive(format!(
            "unsupported archive format version {}",
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Writes a classifier archive to `dir` (created if needed).
pub fn save_classifier(c: &Classifier, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let layers = save_network(dir, &c.net)?;
    write_meta(
        dir,
        &ArchiveMeta {
            format_version: FORMAT_VERSION,
            kind: "classifier".into(),
            arch: c.arch.clone(),
            input_shape: [c.net.input_shape.0, c.net.input_shape.1, c.net.input_shape.2],
            num_classes: Some(c.num_classes),
            model: c.meta.clone(),
            layers,
            weights_sha256: c.fingerprint(),
        },
    )
}

/// Writes an autoencoder archive to `dir` (created if needed).
pub fn save_autoencoder(ae: &Autoencoder, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let layers = save_network(dir, &ae.net)?;
    write_meta(
        dir,
        &ArchiveMeta {
            format_version: FORMAT_VERSION,
            kind: "autoencoder".into(),
            arch: ae.arch.clone(),
            input_shape: [ae.net.input_shape.0, ae.net.input_shape.1, ae.net.input_shape.2],
            num_classes: None,
            model: ae.meta.clone(),
            layers,
            weights_sha256: ae.fingerprint(),
        },
    )
}

/// Loads a classifier archive, verifying kind, architecture, layer
/// structure and weight fingerprint.
pub fn load_classifier(dir: &Path) -> Result<Classifier> {
    let meta = read_meta(dir)?;
    if meta.kind != "classifier" {
        return Err(Error::Archive(format!("archive holds a {}, not a classifier", meta.kind)));
    }
    let arch = ClassifierArch::parse(&meta.arch)
        .map_err(|_| Error::Archive(format!("unknown classifier architecture `{}`", meta.arch)))?;
    let mut c = build_classifier(arch, meta.model.seed);
    load_network_weights(dir, &mut c.net, &meta.layers)?;
    let fp = c.fingerprint();
    if fp != meta.weights_sha256 {
        return Err(Error::Archive(format!(
            "weight fingerprint mismatch: archive says {}, blobs hash to {fp}",
            meta.weights_sha256
        )));
    }
    c.meta = meta.model;
    Ok(c)
}

/// Loads an autoencoder archive, with the same verification as
/// [`load_classifier`].
pub fn load_autoencoder(dir: &Path) -> Result<Autoencoder> {
    let meta = read_meta(dir)?;
    if meta.kind != "autoencoder" {
        return Err(Error::Archive(format!("archive holds a {}, not an autoencoder", meta.kind)));
    }
    let arch = AutoencoderArch::parse(&meta.arch)
        .map_err(|_| Error::Archive(format!("unknown autoencoder architecture `{}`", meta.arch)))?;
    let mut ae = build_autoencoder(arch, meta.model.seed);
    load_network_weights(dir, &mut ae.net, &meta.layers)?;
    let fp = ae.fingerprint();
    if fp != meta.weights_sha256 {
        return Err(Error::Archive(format!(
            "weight fingerprint mismatch: archive says {}, blobs hash to {fp}",
            meta.weights_sha256
        )));
    }
    ae.meta = meta.model;
    Ok(ae)
}
