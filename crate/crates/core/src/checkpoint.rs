//! Binary container used for network checkpoints and adversarial datasets.
//!
//! Layout: the 8-byte magic `CCSRPv01`, a little-endian `u64` manifest
//! length, the JSON manifest, then raw little-endian `f32` blocks. Each
//! manifest block entry records its byte offset from the start of the data
//! section, its element count and its shape.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::{Architecture, LayerParams, LifConfig, Network};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CCSRPv01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest<M> {
    kind: String,
    meta: M,
    blocks: Vec<BlockEntry>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode_container<M: Serialize>(kind: &str, meta: &M, blocks: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let entries = blocks
        .iter()
        .map(|(name, t)| {
            let e = BlockEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len() as u64,
            };
            offset += 4 * t.len() as u64;
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        kind: kind.to_string(),
        meta,
        blocks: entries,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in blocks {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a container, returning its metadata and blocks in file order.
pub fn decode_container<M: DeserializeOwned>(kind: &str, bytes: &[u8], path: &Path) -> Result<(M, Vec<(String, Tensor)>)> {
    if bytes.len() < 16 {
        return Err(Error::TruncatedFile(path.to_path_buf()));
    }
    if &bytes[..8] != MAGIC {
        return Err(malformed(path, "missing container magic"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + mlen).ok_or_else(|| Error::TruncatedFile(path.to_path_buf()))?;
    let manifest: Manifest<M> = serde_json::from_slice(body)?;
    if manifest.kind != kind {
        return Err(malformed(path, format!("expected a {kind} container, found {}", manifest.kind)));
    }
    let data = &bytes[16 + mlen..];
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for b in manifest.blocks {
        let start = b.offset as usize;
        let end = start + 4 * b.len as usize;
        let raw = data.get(start..end).ok_or_else(|| Error::TruncatedFile(path.to_path_buf()))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        blocks.push((b.name, Tensor::new(b.shape, values)?));
    }
    Ok((manifest.meta, blocks))
}

/// Writes to a sibling temp file then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    architecture: Architecture,
    lif: LifConfig,
    seed_tag: u64,
}

pub fn encode_network(net: &Network) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        architecture: net.architecture().clone(),
        lif: *net.lif(),
        seed_tag: net.seed_tag(),
    };
    let mut blocks = Vec::new();
    for (i, p) in net.params().iter().enumerate() {
        blocks.push((format!("layer{i}.weight"), &p.weight));
        blocks.push((format!("layer{i}.bias"), &p.bias));
    }
    encode_container("checkpoint", &meta, &blocks)
}

pub fn decode_network(bytes: &[u8], path: &Path) -> Result<Network> {
    let (meta, blocks): (CheckpointMeta, _) = decode_container("checkpoint", bytes, path)?;
    if blocks.len() != 2 * meta.architecture.layers.len() {
        return Err(malformed(path, "block count does not match layer count"));
    }
    let mut it = blocks.into_iter();
    let mut params = Vec::new();
    while let (Some((_, weight)), Some((_, bias))) = (it.next(), it.next()) {
        params.push(LayerParams { weight, bias });
    }
    Network::from_parts(meta.architecture, params, meta.lif, meta.seed_tag)
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    write_atomic(path, &encode_network(net)?)
}

pub fn load_network(path: &Path) -> Result<Network> {
    decode_network(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::init_network;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let net = init_network(Architecture::desk(8, 4), LifConfig::default(), 17).unwrap();
        let p = dir.path().join("n.ckpt");
        save_network(&net, &p).unwrap();
        let back = load_network(&p).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_network(&back).unwrap(), fs::read(&p).unwrap());
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let net = init_network(Architecture::desk(8, 4), LifConfig::default(), 1).unwrap();
        let bytes = encode_network(&net).unwrap();
        let p = Path::new("x");
        assert!(matches!(decode_network(&bytes[..bytes.len() - 3], p), Err(Error::TruncatedFile(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_network(&bad, p).is_err());
        let other = encode_container("adv_dataset", &serde_json::json!({}), &[]).unwrap();
        assert!(decode_network(&other, p).is_err());
    }
}
