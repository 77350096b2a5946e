use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &str = "AFF1";

/// K frames by M dimensions, row-major, with an optional per-frame tag byte.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    frame_hop_sec: f64,
    tags: Option<Vec<u8>>,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize, frame_hop_sec: f64) -> Result<Self> {
        if cols == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                context: "feature data length",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at frame {}, dim {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self {
            data,
            rows,
            cols,
            frame_hop_sec,
            tags: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], frame_hop_sec: f64) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).ok_or(Error::Empty("feature rows"))?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch {
                    context: "feature row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), cols, frame_hop_sec)
    }

    /// Zero-frame matrix of the given width.
    pub fn empty(cols: usize, frame_hop_sec: f64) -> Self {
        Self {
            data: Vec::new(),
            rows: 0,
            cols,
            frame_hop_sec,
            tags: None,
        }
    }

    pub fn with_tags(mut self, tags: Vec<u8>) -> Result<Self> {
        if tags.len() != self.rows {
            return Err(Error::DimMismatch {
                context: "tag count",
                expected: self.rows,
                got: tags.len(),
            });
        }
        self.tags = Some(tags);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn frame_hop_sec(&self) -> f64 {
        self.frame_hop_sec
    }

    pub fn tags(&self) -> Option<&[u8]> {
        self.tags.as_deref()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, k: usize, d: usize) -> f64 {
        self.data[k * self.cols + d]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.rows).map(|k| self.get(k, d)).collect()
    }

    /// Appends the rows (and tags, when both sides carry them) of `other`.
    pub fn append(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.cols != self.cols {
            return Err(Error::DimMismatch {
                context: "append",
                expected: self.cols,
                got: other.cols,
            });
        }
        self.tags = match (self.tags.take(), &other.tags) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if self.rows == 0 => Some(b.clone()),
            _ => None,
        };
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
        Ok(())
    }

    /// Rows at the given indices, in order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &k in idx {
            data.extend_from_slice(self.row(k));
        }
        FeatureMatrix {
            data,
            rows: idx.len(),
            cols: self.cols,
            frame_hop_sec: self.frame_hop_sec,
            tags: self.tags.as_ref().map(|t| idx.iter().map(|&k| t[k]).collect()),
        }
    }

    /// The first `max_rows` frames.
    pub fn truncated(&self, max_rows: usize) -> FeatureMatrix {
        let n = self.rows.min(max_rows);
        FeatureMatrix {
            data: self.data[..n * self.cols].to_vec(),
            rows: n,
            cols: self.cols,
            frame_hop_sec: self.frame_hop_sec,
            tags: self.tags.as_ref().map(|t| t[..n].to_vec()),
        }
    }

    pub fn concat<'a, I>(cols: usize, frame_hop_sec: f64, parts: I) -> Result<FeatureMatrix>
    where
        I: IntoIterator<Item = &'a FeatureMatrix>,
    {
        let mut out = FeatureMatrix::empty(cols, frame_hop_sec);
        for p in parts {
            out.append(p)?;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(b"AFF1")
            .u32(self.rows as u32)
            .u32(self.cols as u32)
            .f64(self.frame_hop_sec)
            .f64s(&self.data);
        if let Some(t) = &self.tags {
            w.bytes(t);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(FEATURE_MAGIC)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let hop = r.f64()?;
        let data = r.f64s(rows * cols)?;
        let tags = match r.remaining() {
            0 => None,
            n if n == rows => Some(r.bytes(n)?.to_vec()),
            n => return Err(r.malformed(format!("{n} trailing bytes, expected 0 or {rows}"))),
        };
        let m = FeatureMatrix::new(data, rows, cols, hop).map_err(|e| r.malformed(e.to_string()))?;
        Ok(match tags {
            Some(t) => m.with_tags(t)?,
            None => m,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_finite() {
        assert!(FeatureMatrix::new(vec![1.0, f64::NAN], 1, 2, 0.01).is_err());
    }

    #[test]
    fn bad_magic_names_file_and_magic() {
        let err = FeatureMatrix::from_bytes(b"XXXX\0\0\0\0", Path::new("f.aff")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("f.aff") && msg.contains("AFF1"), "{msg}");
    }

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(vec![1.0, 2.0], 1, 2, 0.01).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[..4], b"AFF1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[12..20].try_into().unwrap()), 0.01);
        assert_eq!(b.len(), 20 + 16);
    }

    proptest! {
        #[test]
        fn archive_round_trip(rows in 0usize..6, cols in 1usize..5, tagged in any::<bool>(), seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols).map(|i| ((i as u64 ^ seed) % 1000) as f64 / 7.0).collect();
            let mut m = FeatureMatrix::new(data, rows, cols, 0.01).unwrap();
            if tagged && rows > 0 {
                m = m.with_tags((0..rows as u8).collect()).unwrap();
            }
            let back = FeatureMatrix::from_bytes(&m.to_bytes(), Path::new("x")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
