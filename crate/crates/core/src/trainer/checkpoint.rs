//! Binary checkpoint: magic, version, JSON header, raw little-endian parameters.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::TrainHistory;
use crate::error::{Error, Result};
use crate::models::{GroupId, ModelBundle, ModelConfig};
use crate::nn::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ABRCKPT\0";

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    scalar_bytes: usize,
    /// `(group name, tensor shapes)` in storage order.
    groups: Vec<(String, Vec<[usize; 2]>)>,
    history: TrainHistory,
}

pub fn save_checkpoint<R: Real>(bundle: &ModelBundle<R>, history: &TrainHistory, path: &Path) -> Result<()> {
    let header = Header {
        model: bundle.config().clone(),
        scalar_bytes: R::WIDTH,
        groups: GroupId::ALL
            .iter()
            .map(|&id| {
                let shapes = bundle.group(id).iter().map(|p| [p.nrows(), p.ncols()]).collect();
                (id.name().to_string(), shapes)
            })
            .collect(),
        history: history.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + bundle.num_params() * R::WIDTH + 32);
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION).expect("vec write");
    buf.write_u64::<LittleEndian>(json.len() as u64).expect("vec write");
    buf.extend_from_slice(&json);
    for id in GroupId::ALL {
        for p in bundle.group(id) {
            for v in p.iter() {
                buf.extend_from_slice(&v.le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<R: Real>(path: &Path) -> Result<(ModelBundle<R>, TrainHistory)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let truncated = |what: &str| Error::parse(path, format!("truncated checkpoint ({what})"));

    let mut cursor = bytes.as_slice();
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic).map_err(|_| truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::parse(path, "not a checkpoint file"));
    }
    let version = cursor.read_u32::<LittleEndian>().map_err(|_| truncated("version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = cursor.read_u64::<LittleEndian>().map_err(|_| truncated("header length"))? as usize;
    if cursor.len() < len {
        return Err(truncated("header"));
    }
    let (json, mut body) = cursor.split_at(len);
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::parse(path, e.to_string()))?;
    if header.scalar_bytes != R::WIDTH {
        return Err(Error::parse(
            path,
            format!("stored {}-byte scalars, expected {}", header.scalar_bytes, R::WIDTH),
        ));
    }

    let mut bundle = ModelBundle::<R>::build(&header.model, 0)?;
    if header.groups.len() != GroupId::ALL.len() {
        return Err(Error::parse(path, "wrong number of parameter groups"));
    }
    for (id, (name, shapes)) in GroupId::ALL.iter().zip(&header.groups) {
        let params = bundle.group_mut(*id);
        let expected: Vec<[usize; 2]> = params.iter().map(|p| [p.nrows(), p.ncols()]).collect();
        if name != id.name() || *shapes != expected {
            return Err(Error::parse(path, format!("group {name} does not match its model config")));
        }
        for p in params {
            for v in p.iter_mut() {
                if body.len() < R::WIDTH {
                    return Err(truncated("parameters"));
                }
                let (head, rest) = body.split_at(R::WIDTH);
                *v = R::from_le(head).expect("slice has scalar width");
                body = rest;
            }
        }
    }
    if !body.is_empty() {
        return Err(Error::parse(path, format!("{} trailing bytes", body.len())));
    }
    Ok((bundle, header.history))
}

/// Loads a checkpoint and insists that it was built for `expected`.
pub fn load_checkpoint_matching<R: Real>(
    path: &Path,
    expected: &ModelConfig,
) -> Result<(ModelBundle<R>, TrainHistory)> {
    let (bundle, history) = load_checkpoint(path)?;
    if bundle.config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "{} was saved for {:?}, requested {:?}",
            path.display(),
            bundle.config(),
            expected
        )));
    }
    Ok((bundle, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig::sequence(4, 5, (12.0, 8.0)).with_feature_dim(8)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let bundle = ModelBundle::<f32>::build(&config(), 3).unwrap();
        let mut history = TrainHistory::default();
        history.record_checksums(0, &bundle);
        save_checkpoint(&bundle, &history, &path).unwrap();
        let (back, h) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.checksums(), bundle.checksums());
        assert_eq!(h, history);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let bundle = ModelBundle::<f32>::build(&config(), 3).unwrap();
        save_checkpoint(&bundle, &TrainHistory::default(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [4, 14, 40, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            let err = load_checkpoint::<f32>(&path).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn version_and_config_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let bundle = ModelBundle::<f32>::build(&config(), 3).unwrap();
        save_checkpoint(&bundle, &TrainHistory::default(), &path).unwrap();
        let other = config().with_feature_dim(10);
        let err = load_checkpoint_matching::<f32>(&path, &other).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 9;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::Version { found: 9, .. }));
    }
}
