//! Binary checkpoint format: an ordered list of named f64 tensors with a
//! magic header and version. Writing and re-reading is bit-exact, so
//! training can resume deterministically.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cape_tensor::Tensor;

use crate::{CoreError, Result};

const MAGIC: &[u8; 8] = b"CAPECKPT";
const VERSION: u32 = 1;

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CoreError::BadCheckpoint(format!(
                "duplicate entry '{name}'"
            )));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    /// Stores one f64 as a rank-1, length-1 tensor.
    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        self.push(name, Tensor::vector(vec![value]))
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| CoreError::MissingEntry(name.to_string()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.require(name)?;
        if t.numel() != 1 {
            return Err(CoreError::BadCheckpoint(format!(
                "entry '{name}' holds {} values, expected a scalar",
                t.numel()
            )));
        }
        Ok(t.data()[0])
    }

    /// Scalar coerced back to a usize (stored exactly for values < 2^53).
    pub fn scalar_usize(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if !v.is_finite() || v < 0.0 || v.fract() != 0.0 || v > 2f64.powi(53) {
            return Err(CoreError::BadCheckpoint(format!(
                "entry '{name}' = {v} is not a non-negative integer"
            )));
        }
        Ok(v as usize)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for &d in tensor.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let mut r = BufReader::new(File::open(path)?);
        let truncated = || CoreError::TruncatedFile {
            path: display.clone(),
        };
        let mut read = |buf: &mut [u8]| -> Result<()> {
            r.read_exact(buf).map_err(|_| truncated())
        };

        let mut magic = [0u8; 8];
        read(&mut magic)?;
        if &magic != MAGIC {
            return Err(CoreError::BadMagic {
                path: display.clone(),
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
            });
        }
        let mut u32buf = [0u8; 4];
        read(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(CoreError::UnsupportedVersion(version));
        }
        read(&mut u32buf)?;
        let n_entries = u32::from_le_bytes(u32buf) as usize;

        let mut out = Checkpoint::new();
        for _ in 0..n_entries {
            let mut u16buf = [0u8; 2];
            read(&mut u16buf)?;
            let name_len = u16::from_le_bytes(u16buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            read(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes).map_err(|_| {
                CoreError::BadCheckpoint("entry name is not UTF-8".to_string())
            })?;
            read(&mut u32buf)?;
            let rank = u32::from_le_bytes(u32buf) as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut numel: usize = 1;
            for _ in 0..rank {
                read(&mut u32buf)?;
                let d = u32::from_le_bytes(u32buf) as usize;
                numel = numel.checked_mul(d).ok_or_else(|| {
                    CoreError::BadCheckpoint(format!("entry '{name}' shape overflows"))
                })?;
                shape.push(d);
            }
            let mut data = Vec::with_capacity(numel);
            let mut f64buf = [0u8; 8];
            for _ in 0..numel {
                read(&mut f64buf)?;
                data.push(f64::from_le_bytes(f64buf));
            }
            let tensor = Tensor::from_vec(data, &shape)
                .map_err(|e| CoreError::BadCheckpoint(e.to_string()))?;
            out.push(name, tensor)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(CoreError::BadCheckpoint(
                "trailing bytes after final entry".to_string(),
            ));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push(
            "w",
            Tensor::matrix(2, 3, vec![1.5, -2.25, 1e-300, f64::INFINITY, -0.0, 3.7]).unwrap(),
        )
        .unwrap();
        c.push("b", Tensor::vector(vec![0.125, f64::NEG_INFINITY])).unwrap();
        c.push_scalar("meta.epoch", 42.0).unwrap();
        c
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.len(), c.len());
        for ((na, ta), (nb, tb)) in c.entries().iter().zip(back.entries()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.scalar("meta.epoch").unwrap(), 42.0);
        assert_eq!(back.scalar_usize("meta.epoch").unwrap(), 42);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOTCKPT!restoffile").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CoreError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        sample().save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CoreError::TruncatedFile { .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        sample().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CoreError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        sample().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 9; // bump the little-endian version field
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CoreError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn duplicates_and_missing_entries_error() {
        let mut c = sample();
        assert!(matches!(
            c.push("w", Tensor::vector(vec![1.0])),
            Err(CoreError::BadCheckpoint(_))
        ));
        assert!(matches!(
            c.require("nope"),
            Err(CoreError::MissingEntry(_))
        ));
        assert!(c.scalar("w").is_err());
    }
}
