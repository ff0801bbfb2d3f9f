//! Frozen image-feature storage with a bit-exact binary format.
//!
//! Layout (little-endian): magic "CAPEFS01", u32 feature dimension,
//! u32 record count, then per record: u16 id length, UTF-8 id bytes,
//! u32 composition id, dim × f32 feature, u8 partition (0/1/2).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cape_tensor::Tensor;

use super::CompositionTable;
use crate::{CoreError, Result};

const MAGIC: &[u8; 8] = b"CAPEFS01";

/// Dataset partition of a feature record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub fn as_u8(self) -> u8 {
        match self {
            Partition::Train => 0,
            Partition::Val => 1,
            Partition::Test => 2,
        }
    }

    fn from_u8(tag: u8, path: &str) -> Result<Self> {
        match tag {
            0 => Ok(Partition::Train),
            1 => Ok(Partition::Val),
            2 => Ok(Partition::Test),
            other => Err(CoreError::Parse {
                path: path.to_string(),
                line: 0,
                msg: format!("invalid partition tag {other}"),
            }),
        }
    }
}

/// One image: its id, frozen feature vector, and composition label.
///
/// Features stay in their on-disk f32 precision so that save/load
/// round-trips are bit-exact; they are widened to f64 only when a batch
/// matrix is assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub image_id: String,
    pub composition_id: usize,
    pub feature: Vec<f32>,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    records: Vec<FeatureRecord>,
}

impl FeatureStore {
    pub fn new(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        for rec in &records {
            if rec.feature.len() != dim {
                return Err(CoreError::DimMismatch {
                    expected: dim,
                    found: rec.feature.len(),
                });
            }
        }
        Ok(FeatureStore { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &FeatureRecord {
        &self.records[i]
    }

    /// Indices of records in the given partition, in store order.
    pub fn partition_indices(&self, partition: Partition) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].partition == partition)
            .collect()
    }

    /// Validates that composition labels are in range and that the train
    /// partition touches only seen compositions.
    pub fn validate_against(&self, table: &CompositionTable) -> Result<()> {
        for rec in &self.records {
            if rec.composition_id >= table.len() {
                return Err(CoreError::UnknownName(format!(
                    "composition id {} out of range",
                    rec.composition_id
                )));
            }
            if rec.partition == Partition::Train && table.split(rec.composition_id).is_unseen() {
                return Err(CoreError::UnseenLabelInTraining {
                    composition: rec.composition_id,
                });
            }
        }
        Ok(())
    }

    /// Stacks the chosen records into a rank-2 f64 tensor (row per record).
    pub fn matrix(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend(self.records[i].feature.iter().map(|&v| v as f64));
        }
        Ok(Tensor::from_vec(data, &[indices.len(), self.dim])?)
    }

    /// Composition labels of the chosen records.
    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&i| self.records[i].composition_id)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for rec in &self.records {
            let id = rec.image_id.as_bytes();
            w.write_all(&(id.len() as u16).to_le_bytes())?;
            w.write_all(id)?;
            w.write_all(&(rec.composition_id as u32).to_le_bytes())?;
            for &v in &rec.feature {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&[rec.partition.as_u8()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, &display)?;
        if &magic != MAGIC {
            return Err(CoreError::BadMagic {
                path: display,
                expected: String::from_utf8_lossy(MAGIC).to_string(),
            });
        }
        let dim = read_u32(&mut r, &display)? as usize;
        let count = read_u32(&mut r, &display)? as usize;

        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let id_len = read_u16(&mut r, &display)? as usize;
            let mut id_bytes = vec![0u8; id_len];
            read_exact(&mut r, &mut id_bytes, &display)?;
            let image_id = String::from_utf8(id_bytes).map_err(|_| CoreError::Parse {
                path: display.clone(),
                line: 0,
                msg: "image id is not valid UTF-8".to_string(),
            })?;
            let composition_id = read_u32(&mut r, &display)? as usize;
            let mut feature = Vec::with_capacity(dim);
            let mut buf = [0u8; 4];
            for _ in 0..dim {
                read_exact(&mut r, &mut buf, &display)?;
                feature.push(f32::from_le_bytes(buf));
            }
            let mut tag = [0u8; 1];
            read_exact(&mut r, &mut tag, &display)?;
            records.push(FeatureRecord {
                image_id,
                composition_id,
                feature,
                partition: Partition::from_u8(tag[0], &display)?,
            });
        }
        // Trailing garbage means the writer and reader disagree on layout.
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(CoreError::Parse {
                path: display,
                line: 0,
                msg: "trailing bytes after final record".to_string(),
            });
        }
        FeatureStore::new(dim, records)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| CoreError::TruncatedFile {
        path: path.to_string(),
    })
}

fn read_u16<R: Read>(r: &mut R, path: &str) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf, path)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R, path: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}
