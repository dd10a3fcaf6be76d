//! On-disk containers: tensor dumps, parameter checkpoints, mesh JSON.
//!
//! Tensor dump: `<base>.json` sidecar `{dims, dtype:"f64"}` next to
//! `<base>.bin` holding raw little-endian values.
//!
//! Checkpoint: one file, `[u32 LE manifest length][manifest JSON][raw f64
//! LE data]`. The manifest carries an arbitrary config value plus the
//! named tensor table with offsets into the data section.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{Landmarks, MeshObject, MeshTemplate, Point};
use crate::nn::ParamList;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{file}: {msg}")]
    Malformed { file: String, msg: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn malformed(file: &Path, msg: impl Into<String>) -> IoError {
    IoError::Malformed { file: file.display().to_string(), msg: msg.into() }
}

fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DumpSidecar {
    dims: Vec<usize>,
    dtype: String,
}

/// Write `<base>.json` + `<base>.bin`.
pub fn write_tensor_dump(base: &Path, tensor: &Tensor) -> Result<()> {
    let sidecar = DumpSidecar { dims: tensor.shape(), dtype: "f64".into() };
    fs::write(base.with_extension("json"), serde_json::to_vec_pretty(&sidecar)?)?;
    fs::write(base.with_extension("bin"), f64s_to_bytes(&tensor.data()))?;
    Ok(())
}

pub fn read_tensor_dump(base: &Path) -> Result<Tensor> {
    let json_path = base.with_extension("json");
    let sidecar: DumpSidecar = serde_json::from_slice(&fs::read(&json_path)?)?;
    if sidecar.dtype != "f64" {
        return Err(malformed(&json_path, format!("unsupported dtype {}", sidecar.dtype)));
    }
    let data = bytes_to_f64s(&fs::read(base.with_extension("bin"))?);
    Tensor::from_vec(&sidecar.dims, data)
        .map_err(|e| malformed(&json_path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dims: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: Value,
    tensors: Vec<ManifestEntry>,
}

/// Named tensors plus the config they were trained with.
pub struct Checkpoint {
    pub config: Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn save_checkpoint(path: &Path, config: &Value, params: &ParamList) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut data: Vec<f64> = Vec::new();
    for (name, t) in params {
        let values = t.data();
        entries.push(ManifestEntry {
            name: name.clone(),
            dims: t.shape(),
            offset: data.len(),
            len: values.len(),
        });
        data.extend_from_slice(&values);
    }
    let manifest = serde_json::to_vec(&Manifest { config: config.clone(), tensors: entries })?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&(manifest.len() as u32).to_le_bytes())?;
    f.write_all(&manifest)?;
    f.write_all(&f64s_to_bytes(&data))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = fs::File::open(path)?;
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)?;
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    f.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    let mut blob = Vec::new();
    f.read_to_end(&mut blob)?;
    let data = bytes_to_f64s(&blob);
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        if e.offset + e.len > data.len() || e.dims.iter().product::<usize>() != e.len {
            return Err(malformed(path, format!("tensor {} out of bounds", e.name)));
        }
        tensors.push((e.name, e.dims, data[e.offset..e.offset + e.len].to_vec()));
    }
    Ok(Checkpoint { config: manifest.config, tensors })
}

impl Checkpoint {
    /// Copy stored values into a live parameter list, matching by name.
    pub fn apply(&self, params: &ParamList) -> Result<()> {
        if params.len() != self.tensors.len() {
            return Err(IoError::Malformed {
                file: "checkpoint".into(),
                msg: format!("parameter count {} vs stored {}", params.len(), self.tensors.len()),
            });
        }
        for ((name, t), (stored_name, dims, values)) in params.iter().zip(&self.tensors) {
            if name != stored_name || &t.shape() != dims {
                return Err(IoError::Malformed {
                    file: "checkpoint".into(),
                    msg: format!("parameter {name} does not match stored {stored_name} {dims:?}"),
                });
            }
            t.set_data(values);
        }
        Ok(())
    }
}

/// Mesh JSON: `{points, objects:{name:[indices]}, landmarks:{name:{d1..d8}},
/// pixel_spacing_mm}` with coordinates in normalized units.
pub fn mesh_to_json(template: &MeshTemplate, points: &[Point]) -> Value {
    let mut objects = serde_json::Map::new();
    let mut landmarks = serde_json::Map::new();
    for (obj, lm) in template.objects.iter().zip(&template.landmarks) {
        objects.insert(obj.name.clone(), serde_json::json!(obj.indices));
        landmarks.insert(
            obj.name.clone(),
            serde_json::json!({
                "d1": lm.d1, "d2": lm.d2, "d3": lm.d3, "d4": lm.d4,
                "d5": lm.d5, "d6": lm.d6, "d7": lm.d7, "d8": lm.d8,
            }),
        );
    }
    serde_json::json!({
        "points": points,
        "objects": Value::Object(objects),
        "landmarks": Value::Object(landmarks),
        "pixel_spacing_mm": template.pixel_spacing_mm,
    })
}

pub fn save_mesh(path: &Path, template: &MeshTemplate, points: &[Point]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let value = mesh_to_json(template, points);
    fs::write(path, serde_json::to_vec_pretty(&value)?)?;
    Ok(())
}

pub fn load_mesh(path: &Path) -> Result<MeshTemplate> {
    #[derive(Deserialize)]
    struct MeshFile {
        points: Vec<Point>,
        objects: serde_json::Map<String, Value>,
        landmarks: serde_json::Map<String, Value>,
        pixel_spacing_mm: f64,
    }
    let raw: MeshFile = serde_json::from_slice(&fs::read(path)?)?;
    let mut objects = Vec::new();
    let mut landmarks = Vec::new();
    for name in crate::geometry::OBJECT_NAMES {
        let idx = raw
            .objects
            .get(name)
            .ok_or_else(|| malformed(path, format!("missing object {name}")))?;
        let indices: Vec<usize> = serde_json::from_value(idx.clone())
            .map_err(|e| malformed(path, format!("object {name}: {e}")))?;
        objects.push(MeshObject { name: name.to_string(), indices });
        let lm = raw
            .landmarks
            .get(name)
            .ok_or_else(|| malformed(path, format!("missing landmarks for {name}")))?;
        let lm: Landmarks = serde_json::from_value(lm.clone())
            .map_err(|e| malformed(path, format!("landmarks {name}: {e}")))?;
        landmarks.push(lm);
    }
    let template = MeshTemplate {
        points: raw.points,
        objects,
        landmarks,
        pixel_spacing_mm: raw.pixel_spacing_mm,
    };
    template
        .validate()
        .map_err(|e| malformed(path, e.to_string()))?;
    Ok(template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn tensor_dump_round_trip() {
        let dir = std::env::temp_dir().join("spinemesh_io_test");
        fs::create_dir_all(&dir).unwrap();
        let mut rng = rng::seeded(5);
        let t = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        write_tensor_dump(&dir.join("t"), &t).unwrap();
        let back = read_tensor_dump(&dir.join("t")).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = std::env::temp_dir().join("spinemesh_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        let mut rng = rng::seeded(6);
        let a = Tensor::rand_uniform(&[2, 2], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng);
        let params: ParamList = vec![("layer.a".into(), a.clone()), ("layer.b".into(), b.clone())];
        let cfg = serde_json::json!({"embed_dim": 8});
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &cfg, &params).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config["embed_dim"], 8);
        let a2 = Tensor::zeros(&[2, 2]);
        let b2 = Tensor::zeros(&[3]);
        let fresh: ParamList = vec![("layer.a".into(), a2.clone()), ("layer.b".into(), b2.clone())];
        loaded.apply(&fresh).unwrap();
        assert_eq!(a2.data(), a.data());
        assert_eq!(b2.data(), b.data());

        let wrong: ParamList = vec![("layer.a".into(), Tensor::zeros(&[4]))];
        assert!(loaded.apply(&wrong).is_err());
    }
}
