//! Binary checkpoint format. All integers are 32-bit little-endian.
//!
//! ```text
//! "VGSN" | version | tensor count
//! per tensor: name length | UTF-8 name | rank | dims... | f32 values (LE)
//! ```
//!
//! Tensors are written as `<layer>.weight` (rank 4) and `<layer>.bias`
//! (rank 1) in [`LAYER_NAMES`](super::LAYER_NAMES) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetworkConfig, NetworkParams};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"VGSN";
pub const VERSION: u32 = 1;

/// Refuse absurd headers before allocating.
const MAX_RANK: u32 = 8;
const MAX_NAME: u32 = 1024;

struct Entry {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn entries<T: Real>(params: &NetworkParams<T>) -> Vec<Entry> {
    let mut out = Vec::with_capacity(26);
    for (name, layer) in super::LAYER_NAMES.iter().zip(params.layers()) {
        out.push(Entry {
            name: format!("{name}.weight"),
            dims: layer.weight.shape().to_vec(),
            values: layer.weight.data().iter().map(|v| v.as_f64() as f32).collect(),
        });
        out.push(Entry {
            name: format!("{name}.bias"),
            dims: vec![layer.bias.len()],
            values: layer.bias.iter().map(|v| v.as_f64() as f32).collect(),
        });
    }
    out
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in 32 bits")))
}

pub fn write_to<T: Real, W: Write>(params: &NetworkParams<T>, mut w: W) -> std::io::Result<()> {
    let entries = entries(params);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in &entries {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
        for &d in &e.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &e.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn to_bytes<T: Real>(params: &NetworkParams<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_to(params, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn save<T: Real>(params: &NetworkParams<T>, path: &Path) -> Result<()> {
    // Dimensions were validated when the params were built; this guards
    // against a future config overflowing the header fields.
    for e in entries(params) {
        for d in e.dims {
            u32_of(d, "dimension")?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(params, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_from<T: Real, R: Read>(mut r: R) -> Result<NetworkParams<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut read = Vec::with_capacity(count.min(64) as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        if name_len > MAX_NAME {
            return Err(Error::Checkpoint(format!("tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?;
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: dims {dims:?} overflow")))?;
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("{name}: truncated values: {e}")))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        read.push(Entry { name, dims, values });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    assemble(read)
}

fn assemble<T: Real>(read: Vec<Entry>) -> Result<NetworkParams<T>> {
    let find = |name: &str| {
        read.iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    let dim = |name: &str, i: usize| -> Result<usize> {
        find(name)?
            .dims
            .get(i)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("{name} has too few dimensions")))
    };
    let config = NetworkConfig {
        in_channels: dim("enc1a.weight", 1)?,
        widths: [dim("enc1a.weight", 0)?, dim("enc2a.weight", 0)?, dim("enc3a.weight", 0)?],
    };
    if read.len() != 2 * super::LAYER_NAMES.len() {
        return Err(Error::Checkpoint(format!("expected 26 tensors, found {}", read.len())));
    }
    let mut params = NetworkParams::<T>::zeros(&config);
    for (name, layer) in super::LAYER_NAMES.iter().zip(params.layers_mut()) {
        let w = find(&format!("{name}.weight"))?;
        if w.dims != layer.weight.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}.weight has dims {:?}, expected {:?}",
                w.dims,
                layer.weight.shape()
            )));
        }
        let b = find(&format!("{name}.bias"))?;
        if b.dims != [layer.bias.len()] {
            return Err(Error::Checkpoint(format!("{name}.bias has dims {:?}", b.dims)));
        }
        for (d, &s) in layer.weight.data_mut().iter_mut().zip(&w.values) {
            *d = T::from_f64(s as f64);
        }
        for (d, &s) in layer.bias.iter_mut().zip(&b.values) {
            *d = T::from_f64(s as f64);
        }
    }
    Ok(params)
}

pub fn load<T: Real>(path: &Path) -> Result<NetworkParams<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn header_layout_is_exact() {
        let p = NetworkParams::<f32>::zeros(&NetworkConfig::tiny([1, 1, 1]));
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[0..4], b"VGSN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &26u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &12u32.to_le_bytes());
        assert_eq!(&bytes[16..28], b"enc1a.weight");
        assert_eq!(&bytes[28..32], &4u32.to_le_bytes());
        for (i, d) in [1u32, 1, 3, 3].iter().enumerate() {
            assert_eq!(&bytes[32 + 4 * i..36 + 4 * i], &d.to_le_bytes());
        }
        // 9 zero floats, then the bias entry.
        assert!(bytes[48..84].iter().all(|&b| b == 0));
        assert_eq!(&bytes[84..88], &10u32.to_le_bytes());
        assert_eq!(&bytes[88..98], b"enc1a.bias");
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let p = NetworkParams::<f32>::init(&NetworkConfig::tiny([2, 3, 5]), &mut seed::rng(4)).unwrap();
        let q: NetworkParams<f32> = read_from(to_bytes(&p).as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_corruption() {
        let p = NetworkParams::<f32>::zeros(&NetworkConfig::tiny([1, 2, 2]));
        let bytes = to_bytes(&p);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_from::<f32, _>(bad.as_slice()), Err(Error::Checkpoint(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(read_from::<f32, _>(bad.as_slice()).is_err());

        assert!(read_from::<f32, _>(&bytes[..bytes.len() - 1]).is_err());

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(read_from::<f32, _>(bad.as_slice()).is_err());
    }
}
