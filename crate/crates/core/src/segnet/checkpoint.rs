//! Checkpoint container.
//!
//! Layout: `MFDNNCKP`, u32 format version, u32 header length, a JSON header
//! (arch as TOML text, init seed, tensor names and shapes), then every tensor
//! as little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetworkParams, ParamTensor};
use super::ArchSpec;
use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MFDNNCKP";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    arch: String,
    init_seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint(p: &NetworkParams) -> Result<Vec<u8>> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        arch: toml::to_string(&p.arch).map_err(|e| Error::data(format!("arch serialization: {e}")))?,
        init_seed: p.init_seed,
        tensors: p
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * p.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &p.tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(b: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if b.len() < n {
        return Err(Error::data(format!("checkpoint truncated in {what}")));
    }
    let (head, rest) = b.split_at(n);
    *b = rest;
    Ok(head)
}

fn u32_at(b: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(b, 4, what)?.try_into().expect("4 bytes")))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<NetworkParams> {
    let mut b = bytes;
    if take(&mut b, 8, "magic")? != MAGIC {
        return Err(Error::data("not a checkpoint (bad magic)"));
    }
    let version = u32_at(&mut b, "format_version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "checkpoint format_version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = u32_at(&mut b, "header length")? as usize;
    let header: Header = serde_json::from_slice(take(&mut b, len, "header")?)
        .map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
    if header.format_version != version {
        return Err(Error::data("checkpoint header format_version disagrees with preamble"));
    }
    let arch: ArchSpec =
        toml::from_str(&header.arch).map_err(|e| Error::data(format!("checkpoint arch: {e}")))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let raw = take(&mut b, 4 * n, &e.name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        tensors.push(ParamTensor {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    if !b.is_empty() {
        return Err(Error::data(format!("checkpoint has {} trailing bytes", b.len())));
    }
    NetworkParams::from_tensors(&arch, header.init_seed, tensors)
}

pub fn save_checkpoint(p: &NetworkParams, path: &Path) -> Result<()> {
    write_atomic(path, &write_checkpoint(p)?)
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    read_checkpoint(&read_file(path)?).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> NetworkParams {
        let arch = ArchSpec {
            se_head: true,
            depth: 1,
            base_filters: 4,
            ..ArchSpec::default()
        };
        NetworkParams::init(&arch, 5).unwrap()
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let p = params();
        let bytes = write_checkpoint(&p).unwrap();
        let q = read_checkpoint(&bytes).unwrap();
        assert_eq!(q.arch, p.arch);
        assert_eq!(q.init_seed, 5);
        for (a, b) in p.tensors.iter().zip(&q.tensors) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        // a second round trip is lossless
        assert_eq!(write_checkpoint(&q).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_data_errors() {
        let bytes = write_checkpoint(&params()).unwrap();
        assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Data(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(Error::Data(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(read_checkpoint(&bad), Err(Error::Data(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(read_checkpoint(&long), Err(Error::Data(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = params();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().tensors.len(), p.tensors.len());
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::Io { .. })));
    }
}
