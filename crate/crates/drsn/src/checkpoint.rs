//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic `DRSN`, format version `u32`, parameter count `u32`, then per
//! parameter in the network's fixed order: name length `u16`, name bytes,
//! rank `u8`, dims (`u32` each), values as little-endian `f32`.
//!
//! The network structure is recovered from the parameter names and dims,
//! so a checkpoint is self-describing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{NetworkConfig, SegNetwork};
use crate::rng::SplitMix64;
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"DRSN";
const VERSION: u32 = 1;

/// Serializes the network's parameters.
pub fn save<R: Real>(net: &SegNetwork<R>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(net.param_tensor_count() as u32).to_le_bytes())?;
    let mut io_err = None;
    net.visit_params(|p| {
        if io_err.is_some() {
            return;
        }
        let res = (|| -> std::io::Result<()> {
            out.write_all(&(p.name.len() as u16).to_le_bytes())?;
            out.write_all(p.name.as_bytes())?;
            out.write_all(&[p.dims.len() as u8])?;
            for d in &p.dims {
                out.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in p.values {
                out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
            Ok(())
        })();
        if let Err(e) = res {
            io_err = Some(e);
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    out.flush()?;
    Ok(())
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_entries(path: &Path) -> Result<Vec<Entry>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_format(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut r, "parameter count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for idx in 0..count {
        let mut b2 = [0u8; 2];
        read_exact_or_format(&mut r, &mut b2, "name length")?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact_or_format(&mut r, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("parameter {idx} name is not UTF-8")))?;
        let mut rank = [0u8; 1];
        read_exact_or_format(&mut r, &mut rank, "rank")?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            dims.push(read_u32(&mut r, "dim")? as usize);
        }
        let len: usize = dims.iter().product();
        if len == 0 {
            return Err(Error::Format(format!("parameter {name} has zero size")));
        }
        let mut raw = vec![0u8; len * 4];
        read_exact_or_format(&mut r, &mut raw, "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect::<Vec<f32>>();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "parameter {name} contains non-finite values"
            )));
        }
        entries.push(Entry { name, dims, values });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last parameter".into()));
    }
    Ok(entries)
}

/// Deserializes a network. The architecture (blocks, channels, kernel) is
/// inferred from the stored parameter names and dims; any inconsistency is
/// a format error.
pub fn load<R: Real>(path: &Path) -> Result<SegNetwork<R>> {
    let entries = read_entries(path)?;
    let deform0 = entries
        .iter()
        .find(|e| e.name == "block0.deform.weight")
        .ok_or_else(|| Error::Format("checkpoint has no block0.deform.weight".into()))?;
    if deform0.dims.len() != 4 {
        return Err(Error::Format(format!(
            "block0.deform.weight has rank {}, expected 4",
            deform0.dims.len()
        )));
    }
    if deform0.dims[1] != 1 {
        return Err(Error::Format(format!(
            "checkpointed network expects {}-channel input, this build supports 1",
            deform0.dims[1]
        )));
    }
    let config = NetworkConfig {
        channels: deform0.dims[0],
        blocks: entries
            .iter()
            .filter(|e| e.name.starts_with("block") && e.name.ends_with(".deform.weight"))
            .count(),
        kernel: deform0.dims[2],
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("checkpointed architecture invalid: {e}")))?;

    let mut net = SegNetwork::new(config, &mut SplitMix64::new(0))
        .map_err(|e| Error::Format(format!("cannot rebuild checkpointed network: {e}")))?;

    let mut cursor = 0usize;
    let mut fill_err: Option<Error> = None;
    net.visit_params_mut(|p| {
        if fill_err.is_some() {
            return;
        }
        let Some(entry) = entries.get(cursor) else {
            fill_err = Some(Error::Format(format!(
                "checkpoint ends before parameter {}",
                p.name
            )));
            return;
        };
        if entry.name != p.name {
            fill_err = Some(Error::Format(format!(
                "parameter order mismatch: checkpoint has {}, network expects {}",
                entry.name, p.name
            )));
            return;
        }
        if entry.dims != p.dims {
            fill_err = Some(Error::Format(format!(
                "parameter {} has dims {:?}, network expects {:?}",
                entry.name, entry.dims, p.dims
            )));
            return;
        }
        for (slot, v) in p.values.iter_mut().zip(&entry.values) {
            *slot = R::from_f64(*v as f64);
        }
        cursor += 1;
    });
    if let Some(e) = fill_err {
        return Err(e);
    }
    if cursor != entries.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} extra parameter(s) beyond the architecture",
            entries.len() - cursor
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor4;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("drsn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_net(seed: u64) -> SegNetwork {
        SegNetwork::new(
            NetworkConfig {
                channels: 3,
                blocks: 2,
                kernel: 3,
            },
            &mut SplitMix64::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_reproduces_forward_bit_exactly() {
        let dir = tmpdir();
        let path = dir.join("roundtrip.ckpt");
        let net = small_net(42);
        save(&net, &path).unwrap();
        let loaded: SegNetwork = load(&path).unwrap();
        assert_eq!(loaded.config(), net.config());

        let mut rng = SplitMix64::new(7);
        let x =
            Tensor4::from_vec(1, 1, 10, 10, (0..100).map(|_| rng.next_f64()).collect()).unwrap();
        let y1 = net.infer(&x).unwrap();
        let y2 = loaded.infer(&x).unwrap();
        assert_eq!(y1.data(), y2.data());

        // save-load-save is byte stable
        let path2 = dir.join("roundtrip2.ckpt");
        save(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tmpdir();
        let path = dir.join("badmagic.ckpt");
        let net = small_net(1);
        save(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load::<f64>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_rejected() {
        let dir = tmpdir();
        let path = dir.join("trunc.ckpt");
        let net = small_net(2);
        save(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load::<f64>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn cross_precision_load_matches() {
        let dir = tmpdir();
        let path = dir.join("cross.ckpt");
        let net = small_net(9);
        save(&net, &path).unwrap();
        let as32: SegNetwork<f32> = load(&path).unwrap();
        let as64: SegNetwork<f64> = load(&path).unwrap();
        let mut v32 = Vec::new();
        as32.visit_params(|p| v32.extend(p.values.iter().map(|v| v.as_f64())));
        let mut v64 = Vec::new();
        as64.visit_params(|p| v64.extend(p.values.iter().copied()));
        assert_eq!(v32, v64);
    }
}
