//! Labeled signal datasets and the SIGSET container format.
//!
//! Layout (little-endian): magic `SIGSET\0\0`, u32 version, u32 record
//! count, u32 n, u32 m, u32 K, K class names (u16 byte length + UTF-8),
//! then per record u16 label, i16 SNR in dB and n·m f32 features in
//! row-major order, and finally the CRC32 of all preceding bytes.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

use super::codec::{check_length_and_crc, check_preamble, write_atomic, ByteReader, ByteWriter};

pub const SIGSET_MAGIC: &[u8; 8] = b"SIGSET\0\0";
pub const SIGSET_VERSION: u32 = 1;

/// One labeled example. Features are held at f32 precision so that a
/// write/read round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub features: Matrix,
    pub label: usize,
    pub snr_db: i16,
}

impl SignalRecord {
    pub fn new(features: Matrix, label: usize, snr_db: i16) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::NonFinite("record features".into()));
        }
        if label > u16::MAX as usize {
            return Err(Error::InvalidInput(format!("label {label} does not fit in u16")));
        }
        let mut features = features;
        for v in features.as_mut_slice() {
            *v = f64::from(*v as f32);
        }
        Ok(SignalRecord {
            features,
            label,
            snr_db,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SignalRecord>,
    pub class_names: Vec<String>,
    pub seq_len: usize,
    pub num_features: usize,
    /// Free text describing where the data came from. Not stored in SIGSET.
    pub provenance: String,
}

impl Dataset {
    /// Takes `n` and `m` from the first record.
    pub fn new(records: Vec<SignalRecord>, class_names: Vec<String>, provenance: String) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset needs at least one record".into()))?;
        let (seq_len, num_features) = first.features.shape();
        let ds = Dataset {
            records,
            class_names,
            seq_len,
            num_features,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_names.len();
        if k == 0 || k > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput(format!("{k} class names")));
        }
        if self.seq_len == 0 || self.num_features == 0 {
            return Err(Error::InvalidInput("empty feature shape".into()));
        }
        for name in &self.class_names {
            if name.len() > u16::MAX as usize {
                return Err(Error::InvalidInput("class name longer than 65535 bytes".into()));
            }
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.features.shape() != (self.seq_len, self.num_features) {
                return Err(Error::shape(
                    "Dataset record",
                    (self.seq_len, self.num_features),
                    r.features.shape(),
                ));
            }
            if r.label >= k {
                return Err(Error::InvalidInput(format!("record {i}: label {} >= {k}", r.label)));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct SNR tags, ascending.
    pub fn snr_values(&self) -> Vec<i16> {
        self.records
            .iter()
            .map(|r| r.snr_db)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = ByteWriter::default();
        w.bytes(SIGSET_MAGIC);
        w.u32(SIGSET_VERSION);
        w.u32(count_u32(self.records.len(), "record count")?);
        w.u32(count_u32(self.seq_len, "n")?);
        w.u32(count_u32(self.num_features, "m")?);
        w.u32(count_u32(self.class_names.len(), "K")?);
        for name in &self.class_names {
            w.u16(name.len() as u16);
            w.bytes(name.as_bytes());
        }
        for r in &self.records {
            w.u16(r.label as u16);
            w.i16(r.snr_db);
            for &v in r.features.as_slice() {
                w.f32(v as f32);
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        check_preamble(data, SIGSET_MAGIC, SIGSET_VERSION)?;
        let mut r = ByteReader::new(data);
        r.take(SIGSET_MAGIC.len() + 4)?;
        let n_records = r.u32()? as u64;
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let k = r.u32()? as usize;
        if n == 0 || m == 0 || k == 0 {
            return Err(Error::Layout(format!("header declares n={n}, m={m}, K={k}")));
        }
        if k > u16::MAX as usize + 1 {
            return Err(Error::Layout(format!("K={k} exceeds the u16 label range")));
        }
        let mut class_names = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::Layout("class name is not UTF-8".into()))?;
            class_names.push(name.to_string());
        }
        let record_bytes = 4 + 4 * (n as u64) * (m as u64);
        let expected = n_records
            .checked_mul(record_bytes)
            .and_then(|b| b.checked_add(r.position() as u64 + 4))
            .ok_or_else(|| Error::Layout("declared size overflows".into()))?;
        check_length_and_crc(data, expected)?;

        let mut records = Vec::with_capacity(n_records as usize);
        for i in 0..n_records {
            let label = r.u16()? as usize;
            let snr_db = r.i16()?;
            if label >= k {
                return Err(Error::Layout(format!("record {i}: label {label} >= K={k}")));
            }
            let mut values = Vec::with_capacity(n * m);
            for _ in 0..n * m {
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(Error::Layout(format!("record {i}: non-finite feature")));
                }
                values.push(f64::from(v));
            }
            records.push(SignalRecord {
                features: Matrix::from_vec(n, m, values)?,
                label,
                snr_db,
            });
        }
        Ok(Dataset {
            records,
            class_names,
            seq_len: n,
            num_features: m,
            provenance: String::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        let mut ds = Self::from_bytes(&data)?;
        ds.provenance = format!("SIGSET v{SIGSET_VERSION} {}", path.display());
        Ok(ds)
    }
}

fn count_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} exceeds u32")))
}
