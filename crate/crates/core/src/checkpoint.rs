//! Single-file checkpoint container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "SEQDIFF\0" | version u32 | config: u64 len + UTF-8
//! | u64 tensor count | per tensor: u64 name len, name, u64 count, f64 values
//! | u64 record count | per record: u64 name len, name, u64 count, u64 values
//! ```

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SEQDIFF\0";
pub const VERSION: u32 = 1;

/// Named `f64` tensors and `u64` records plus a free-form config snapshot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Vec<f64>)>,
    pub records: Vec<(String, Vec<u64>)>,
}

impl Checkpoint {
    pub fn put_tensor(&mut self, name: impl Into<String>, values: &[f64]) {
        self.tensors.push((name.into(), values.to_vec()));
    }

    pub fn put_record(&mut self, name: impl Into<String>, values: &[u64]) {
        self.records.push((name.into(), values.to_vec()));
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn record(&self, name: &str) -> Result<&[u64]> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name:?}")))
    }

    /// Record that must hold exactly one value.
    pub fn scalar(&self, name: &str) -> Result<u64> {
        match self.record(name)? {
            [v] => Ok(*v),
            other => Err(Error::Checkpoint(format!("record {name:?} has {} values, expected 1", other.len()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut out, self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, vals) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (name, vals) in &self.records {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {VERSION})"
            )));
        }
        let config = r.string()?;
        let mut ck = Checkpoint {
            config,
            ..Default::default()
        };
        for _ in 0..r.count()? {
            let name = r.string()?;
            let n = r.count()?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.corrupt())?)?;
            let vals = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            ck.tensors.push((name, vals));
        }
        for _ in 0..r.count()? {
            let name = r.string()?;
            let n = r.count()?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.corrupt())?)?;
            let vals = raw
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            ck.records.push((name, vals));
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt());
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write beside the target and rename so a crash never leaves a torn file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self) -> Error {
        Error::Checkpoint(format!("format version {VERSION}: corrupt data at byte {}", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.corrupt())?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn count(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.corrupt())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.count()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint {
            config: "seed=3\n".into(),
            ..Default::default()
        };
        c.put_tensor("w", &[1.5, -0.0, f64::MIN_POSITIVE, 1e300]);
        c.put_tensor("empty", &[]);
        c.put_record("step", &[42]);
        c
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back.tensor("w").unwrap()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.scalar("step").unwrap(), 42);
        assert!(back.tensor("nope").is_err());
    }

    #[test]
    fn corruption_is_reported_with_version() {
        let bytes = sample().to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("version 1"), "{err}");
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("version 9"));
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }
}
