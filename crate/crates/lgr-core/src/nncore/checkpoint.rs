//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "LGRCKPT1"
//! count   u32      number of entries
//! entry   repeated: u16 name_len, name bytes (utf8),
//!                   u8 dtype (0 = f32, 1 = f64),
//!                   u8 rank, u32 dims[rank]
//! data    entry payloads in entry order, values little-endian
//! ```
//!
//! Values are held as f64 in memory regardless of the on-disk dtype, so a
//! checkpoint written at f32 loads into an f64 model and vice versa
//! (narrowing rounds to nearest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{invalid_arg, Error, Result};

const MAGIC: &[u8; 8] = b"LGRCKPT1";

/// One named tensor in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl StateEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        StateEntry { name: name.into(), shape, data }
    }
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse { line: 0, msg: msg.into() }
}

/// Writes entries with the given on-disk dtype ("f32" or "f64").
pub fn save_state(path: &Path, dtype: &str, entries: &[StateEntry]) -> Result<()> {
    let dtype_tag: u8 = match dtype {
        "f32" => 0,
        "f64" => 1,
        other => return Err(invalid_arg!("unknown checkpoint dtype {other}")),
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let numel: usize = e.shape.iter().product();
        if numel != e.data.len() {
            return Err(invalid_arg!(
                "entry {} has {} values but shape {:?}",
                e.name,
                e.data.len(),
                e.shape
            ));
        }
        if e.name.len() > u16::MAX as usize || e.shape.len() > u8::MAX as usize {
            return Err(invalid_arg!("entry {} name or rank too large", e.name));
        }
        w.write_all(&(e.name.len() as u16).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&[dtype_tag, e.shape.len() as u8])?;
        for &d in &e.shape {
            if d > u32::MAX as usize {
                return Err(invalid_arg!("entry {} dimension {d} too large", e.name));
            }
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for e in entries {
        match dtype_tag {
            0 => {
                for &v in &e.data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            _ => {
                for &v in &e.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by `save_state`. Rejects bad magic,
/// truncation, and trailing bytes.
pub fn load_state(path: &Path) -> Result<Vec<StateEntry>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(parse_err("checkpoint truncated"));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(parse_err("bad checkpoint magic"));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| parse_err("entry name is not utf8"))?
            .to_string();
        let meta = take(&mut pos, 2)?;
        let (dtype_tag, rank) = (meta[0], meta[1] as usize);
        if dtype_tag > 1 {
            return Err(parse_err(format!("entry {name} has unknown dtype tag {dtype_tag}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        headers.push((name, dtype_tag, shape));
    }
    let mut entries = Vec::with_capacity(count);
    for (name, dtype_tag, shape) in headers {
        let numel: usize = shape.iter().product();
        let width = if dtype_tag == 0 { 4 } else { 8 };
        let raw = take(&mut pos, numel * width)?;
        let data: Vec<f64> = if dtype_tag == 0 {
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        entries.push(StateEntry { name, shape, data });
    }
    if pos != buf.len() {
        return Err(parse_err(format!("{} trailing bytes after data section", buf.len() - pos)));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_entries() -> Vec<StateEntry> {
        vec![
            StateEntry::new("a.weight", vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 4.0, -0.125]),
            StateEntry::new("a.bias", vec![3], vec![0.5, 0.5, -1.0]),
            StateEntry::new("opt.t", vec![1], vec![17.0]),
        ]
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let entries = sample_entries();
        save_state(&path, "f64", &entries).unwrap();
        assert_eq!(load_state(&path).unwrap(), entries);
    }

    #[test]
    fn f32_round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        // All sample values are exactly representable in f32.
        let entries = sample_entries();
        save_state(&path, "f32", &entries).unwrap();
        assert_eq!(load_state(&path).unwrap(), entries);
    }

    #[test]
    fn rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_state(&path, "f64", &sample_entries()).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(load_state(&path).is_err());

        let truncated = &good[..good.len() - 3];
        std::fs::write(&path, truncated).unwrap();
        assert!(load_state(&path).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        std::fs::write(&path, &trailing).unwrap();
        assert!(load_state(&path).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = load_state(Path::new("/nonexistent/ck.bin")).unwrap_err();
        assert!(matches!(e, crate::Error::Io(_)));
    }
}
