//! `.vtw` weights container.
//!
//! ```text
//! "VTW1"                       4 bytes
//! version                      u32 LE
//! header length                u64 LE
//! header                       UTF-8 JSON {"config": {..}, "tensors": [{"name", "shape"}, ..]}
//! payload                      f32 LE per tensor, concatenated in table order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

use super::config::ViTConfig;
use super::weights::{tensor_specs, ModelWeights};

pub const MAGIC: [u8; 4] = *b"VTW1";
pub const FORMAT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ViTConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn encode_weights(model: &ModelWeights, cfg: &ViTConfig) -> Result<Vec<u8>> {
    model.validate(cfg)?;
    let named = model.named_tensors();
    let header = Header {
        config: cfg.clone(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = named.iter().map(|(_, t)| t.len() * 4).sum();
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses and fully validates a container. Nothing is returned unless the
/// whole file is consistent.
pub fn decode_weights(bytes: &[u8]) -> Result<(ModelWeights, ViTConfig)> {
    let (cfg, table, payload) = parse_header(bytes)?;

    let expected = tensor_specs(&cfg);
    check_table(&table, &expected)?;

    let needed: u64 = table.iter().map(|t| t.shape.iter().product::<usize>() as u64 * 4).sum();
    if payload.len() as u64 != needed {
        return Err(Error::PayloadLength {
            expected: needed,
            actual: payload.len() as u64,
        });
    }

    let mut model = ModelWeights::zeros(&cfg);
    let mut offset = 0;
    for (entry, tensor) in table.iter().zip(model.tensors_mut()) {
        let len = tensor.len() * 4;
        for (dst, src) in tensor.data_mut().iter_mut().zip(payload[offset..offset + len].chunks_exact(4)) {
            *dst = f32::from_le_bytes([src[0], src[1], src[2], src[3]]);
        }
        if let Some(index) = tensor.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: entry.name.clone(),
                index,
            });
        }
        offset += len;
    }
    Ok((model, cfg))
}

/// Reads only the configuration and tensor table.
pub fn read_header(bytes: &[u8]) -> Result<(ViTConfig, Vec<TensorEntry>)> {
    let (cfg, table, _) = parse_header(bytes)?;
    Ok((cfg, table))
}

fn parse_header(bytes: &[u8]) -> Result<(ViTConfig, Vec<TensorEntry>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Header(format!("file is only {} bytes long", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < PREFIX_LEN {
        return Err(Error::Header("file ends inside the fixed prefix".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("length checked"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("length checked"));
    let rest = &bytes[PREFIX_LEN..];
    if header_len > rest.len() as u64 {
        return Err(Error::Header(format!(
            "header declares {header_len} bytes but only {} remain",
            rest.len()
        )));
    }
    let (json, payload) = rest.split_at(header_len as usize);
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Header(e.to_string()))?;
    header.config.validate()?;
    Ok((header.config, header.tensors, payload))
}

fn check_table(table: &[TensorEntry], expected: &[(String, Vec<usize>)]) -> Result<()> {
    for (i, (name, shape)) in expected.iter().enumerate() {
        let Some(entry) = table.get(i) else {
            return Err(Error::ShapeTable {
                name: name.clone(),
                reason: "missing from the tensor table".into(),
            });
        };
        if &entry.name != name {
            return Err(Error::ShapeTable {
                name: entry.name.clone(),
                reason: format!("expected tensor `{name}` at position {i}"),
            });
        }
        if &entry.shape != shape {
            return Err(Error::ShapeTable {
                name: name.clone(),
                reason: format!("shape {:?} does not match config (expected {shape:?})", entry.shape),
            });
        }
    }
    if let Some(extra) = table.get(expected.len()) {
        return Err(Error::ShapeTable {
            name: extra.name.clone(),
            reason: "unexpected extra tensor".into(),
        });
    }
    Ok(())
}

pub fn save_weights(model: &ModelWeights, cfg: &ViTConfig, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_weights(model, cfg)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(ModelWeights, ViTConfig)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::weights::random_init;

    fn toy_bytes() -> (ModelWeights, ViTConfig, Vec<u8>) {
        let cfg = ViTConfig::toy();
        let model = random_init(&cfg, 42);
        let bytes = encode_weights(&model, &cfg).unwrap();
        (model, cfg, bytes)
    }

    fn rewrite_header(bytes: &[u8], f: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        f(&mut header);
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[16 + len..]);
        out
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (model, cfg, bytes) = toy_bytes();
        let (loaded, loaded_cfg) = decode_weights(&bytes).unwrap();
        assert_eq!(loaded_cfg, cfg);
        for ((n, a), (_, b)) in model.named_tensors().iter().zip(loaded.named_tensors()) {
            let bits = |t: &crate::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{n}");
        }
        assert_eq!(encode_weights(&loaded, &loaded_cfg).unwrap(), bytes);
    }

    #[test]
    fn prefix_layout() {
        let (_, _, bytes) = toy_bytes();
        assert_eq!(&bytes[..4], b"VTW1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn truncated_payload() {
        let (_, _, bytes) = toy_bytes();
        let err = decode_weights(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::PayloadLength { .. }), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_weights(&long), Err(Error::PayloadLength { .. })));
    }

    #[test]
    fn bad_magic() {
        let (_, _, mut bytes) = toy_bytes();
        bytes[3] = b'2';
        assert!(matches!(decode_weights(&bytes), Err(Error::BadMagic(m)) if &m == b"VTW2"));
    }

    #[test]
    fn version_mismatch() {
        let (_, _, mut bytes) = toy_bytes();
        bytes[4] = 2;
        assert!(matches!(
            decode_weights(&bytes),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn patch_embed_shape_mismatch_names_tensor() {
        let (_, _, bytes) = toy_bytes();
        let bad = rewrite_header(&bytes, |h| h["tensors"][0]["shape"] = serde_json::json!([767, 64]));
        match decode_weights(&bad) {
            Err(Error::ShapeTable { name, .. }) => assert_eq!(name, "patch_embed.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_tensor_is_reported() {
        let (_, _, bytes) = toy_bytes();
        let bad = rewrite_header(&bytes, |h| {
            h["tensors"].as_array_mut().unwrap().pop();
        });
        assert!(matches!(decode_weights(&bad), Err(Error::ShapeTable { name, .. }) if name == "head.bias"));
    }

    #[test]
    fn non_finite_payload() {
        let (_, _, mut bytes) = toy_bytes();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_weights(&bytes),
            Err(Error::NonFinite { name, index: 3 }) if name == "head.bias"
        ));
    }

    #[test]
    fn truncated_header() {
        let (_, _, bytes) = toy_bytes();
        assert!(matches!(decode_weights(&bytes[..10]), Err(Error::Header(_))));
        assert!(matches!(decode_weights(&bytes[..40]), Err(Error::Header(_))));
    }

    #[test]
    fn file_roundtrip() {
        let (model, cfg, _) = toy_bytes();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.vtw");
        save_weights(&model, &cfg, &path).unwrap();
        let (loaded, _) = load_weights(&path).unwrap();
        assert_eq!(loaded, model);
    }
}
