//! Directory checkpoints: `manifest.json` plus one little-endian raw blob per
//! tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerParams, LayerSpec, LayeredModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    #[serde(flatten)]
    spec: LayerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    byte_order: String,
    dtype: String,
    input_shape: [usize; 3],
    class_count: usize,
    layers: Vec<LayerEntry>,
}

fn write_blob(dir: &Path, file: &str, t: &Tensor) -> Result<TensorEntry> {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(file), bytes)?;
    Ok(TensorEntry {
        shape: t.shape().to_vec(),
        file: file.to_string(),
    })
}

fn read_blob(dir: &Path, entry: &TensorEntry) -> Result<Tensor> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path)
        .map_err(|e| Error::CorruptPayload(format!("cannot read blob {}: {e}", entry.file)))?;
    let n: usize = entry.shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::CorruptPayload(format!(
            "blob {} holds {} bytes, manifest shape {:?} needs {}",
            entry.file,
            bytes.len(),
            entry.shape,
            n * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(entry.shape.clone(), data)
}

pub fn save_checkpoint(model: &LayeredModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(model.specs.len());
    for (spec, params) in model.specs.iter().zip(&model.params) {
        let (weight, bias) = match params {
            Some(p) => (
                Some(write_blob(dir, &format!("{}.weight.bin", spec.name), &p.weight)?),
                Some(write_blob(dir, &format!("{}.bias.bin", spec.name), &p.bias)?),
            ),
            None => (None, None),
        };
        layers.push(LayerEntry {
            spec: spec.clone(),
            weight,
            bias,
        });
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        byte_order: "little-endian".into(),
        dtype: "f64".into(),
        input_shape: model.input_shape,
        class_count: model.class_count,
        layers,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<LayeredModel> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptPayload(format!("manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint format version {} is not supported (expected {})",
            manifest.format_version, CHECKPOINT_VERSION
        )));
    }
    if manifest.byte_order != "little-endian" || manifest.dtype != "f64" {
        return Err(Error::Data(format!(
            "unsupported tensor encoding {} / {}",
            manifest.byte_order, manifest.dtype
        )));
    }
    let mut specs = Vec::with_capacity(manifest.layers.len());
    let mut params = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        let p = match (&layer.weight, &layer.bias) {
            (Some(w), Some(b)) => Some(LayerParams {
                weight: read_blob(dir, w)?,
                bias: read_blob(dir, b)?,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::CorruptPayload(format!(
                    "layer '{}' lists only one of weight/bias",
                    layer.spec.name
                )))
            }
        };
        specs.push(layer.spec.clone());
        params.push(p);
    }
    LayeredModel::new(manifest.input_shape, specs, params, manifest.class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(m: &LayeredModel) -> Vec<u64> {
        m.params()
            .iter()
            .flatten()
            .flat_map(|p| p.weight.data().iter().chain(p.bias.data()))
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = LayeredModel::reference_cnn([1, 16, 16], 4, 0).unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.specs(), m.specs());
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn missing_layer_blob_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let m = LayeredModel::reference_mlp([1, 4, 4], 3, 0).unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        // manifest lists three dense layers, drop the payload of the last one
        fs::remove_file(dir.path().join("fc3.weight.bin")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::CorruptPayload(_))));
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let m = LayeredModel::reference_mlp([1, 4, 4], 3, 0).unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        let path = dir.path().join("fc1.weight.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::CorruptPayload(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = LayeredModel::reference_mlp([1, 4, 4], 3, 0).unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        let p = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&p).unwrap().replace(
            "\"format_version\": 1",
            "\"format_version\": 99",
        );
        fs::write(&p, text).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_shape_disagreeing_with_spec_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = LayeredModel::reference_mlp([1, 4, 4], 3, 0).unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        let p = dir.path().join(MANIFEST);
        let mut manifest: Manifest = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        // reinterpret the 3-vector bias of fc3 as [1, 3]
        manifest.layers[5].bias.as_mut().unwrap().shape = vec![1, 3];
        fs::write(&p, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Shape(_))));
    }
}
