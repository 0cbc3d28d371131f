//! Single-file checkpoints.
//!
//! ```text
//! b"HOLOCKPT"  u32 LE format version  u64 LE header length
//! header: JSON {config, params: [{name, shape}]}
//! payload: every parameter as little-endian f64, in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Array;

pub const MAGIC: &[u8; 8] = b"HOLOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<Entry>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        params: model
            .params
            .names()
            .iter()
            .zip(model.params.values())
            .map(|(n, v)| Entry {
                name: n.clone(),
                shape: v.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.params.count_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.params.values() {
        for x in v.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Model> {
    let corrupt = |reason: &str| Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
    header.config.validate()?;
    let mut payload = bytes[20 + len..].chunks_exact(8);
    let expected: usize = header.params.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() != expected || !payload.remainder().is_empty() {
        return Err(corrupt(&format!(
            "payload holds {} bytes, header describes {expected} values",
            bytes.len() - 20 - len
        )));
    }
    let mut params = ParamStore::new();
    for e in header.params {
        let n = e.shape.iter().product();
        let data = payload
            .by_ref()
            .take(n)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(&e.name, Array::new(e.shape, data)?)?;
    }
    // The layout must be exactly what this config builds.
    let reference = Model::new(header.config.clone(), 0)?;
    if reference.params.names() != params.names()
        || reference
            .params
            .values()
            .iter()
            .zip(params.values())
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::Version {
            found: "parameter layout in checkpoint".into(),
            expected: "layout implied by its model config".into(),
        });
    }
    Ok(Model {
        config: header.config,
        params,
    })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = Model::new(ModelConfig::micro(32), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_and_version_errors() {
        let m = Model::new(ModelConfig::micro(32), 5).unwrap();
        let bytes = to_bytes(&m).unwrap();
        let p = Path::new("x");
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3], p), Err(Error::CorruptFile { .. })));
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(matches!(from_bytes(&wrong, p), Err(Error::Version { .. })));
        assert!(matches!(from_bytes(b"nonsense", p), Err(Error::CorruptFile { .. })));
    }
}
