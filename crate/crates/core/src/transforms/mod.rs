//! Linear feature transforms: PCA, LDA and HLDA with frame splicing.

mod hlda;
mod pca;
mod scatter;

pub use hlda::{fit_hlda, fit_hlda_stats, hlda_objective, HldaConfig, HldaFit, HldaInit};
pub use pca::{fit_pca, PcaFit};
pub use scatter::{fit_lda, scatter_matrices, ClassStats, ScatterPair};

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

pub const TRANSFORM_MAGIC: &str = "AFT1";

/// `y_k = matrix * splice(x, k, context) + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub context: usize,
}

impl LinearTransform {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>, context: usize) -> Result<Self> {
        if offset.len() != matrix.nrows() {
            return Err(Error::DimMismatch {
                context: "transform offset",
                expected: matrix.nrows(),
                got: offset.len(),
            });
        }
        if matrix.ncols() % (2 * context + 1) != 0 {
            return Err(Error::invalid(format!(
                "input dim {} is not a multiple of {}",
                matrix.ncols(),
                2 * context + 1
            )));
        }
        if matrix.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("transform contains non-finite values"));
        }
        Ok(Self { matrix, offset, context })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
            context: 0,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Per-frame dimension expected before splicing.
    pub fn base_dim(&self) -> usize {
        self.in_dim() / (2 * self.context + 1)
    }

    pub fn apply(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        if feats.cols() != self.base_dim() {
            return Err(Error::DimMismatch {
                context: "transform input",
                expected: self.base_dim(),
                got: feats.cols(),
            });
        }
        let out_dim = self.out_dim();
        let mut data = Vec::with_capacity(feats.rows() * out_dim);
        let mut buf = vec![0.0; self.in_dim()];
        for k in 0..feats.rows() {
            splice_into(feats, k, self.context, &mut buf);
            for o in 0..out_dim {
                let mut acc = self.offset[o];
                for (j, v) in buf.iter().enumerate() {
                    acc += self.matrix[(o, j)] * v;
                }
                data.push(acc);
            }
        }
        let out = FeatureMatrix::new(data, feats.rows(), out_dim, feats.frame_hop_sec())?;
        Ok(match feats.tags() {
            Some(t) => out.with_tags(t.to_vec())?,
            None => out,
        })
    }

    fn write_record(&self, w: &mut Writer) {
        w.magic(b"AFT1")
            .u32(self.in_dim() as u32)
            .u32(self.out_dim() as u32)
            .u32(self.context as u32);
        for r in 0..self.out_dim() {
            for c in 0..self.in_dim() {
                w.f64(self.matrix[(r, c)]);
            }
        }
        w.f64s(self.offset.as_slice());
    }

    fn read_record(r: &mut Reader) -> Result<Self> {
        r.expect_magic(TRANSFORM_MAGIC)?;
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let context = r.u32()? as usize;
        let m = r.f64s(in_dim * out_dim)?;
        let off = r.f64s(out_dim)?;
        Self::new(
            DMatrix::from_row_slice(out_dim, in_dim, &m),
            DVector::from_vec(off),
            context,
        )
        .map_err(|e| r.malformed(e.to_string()))
    }
}

/// Frames `k-C ..= k+C` concatenated, with edge frames replicated.
pub fn splice_into(feats: &FeatureMatrix, k: usize, context: usize, out: &mut [f64]) {
    let d = feats.cols();
    let last = feats.rows() as isize - 1;
    for (slot, off) in (-(context as isize)..=context as isize).enumerate() {
        let src = (k as isize + off).clamp(0, last) as usize;
        out[slot * d..(slot + 1) * d].copy_from_slice(feats.row(src));
    }
}

pub fn splice(feats: &FeatureMatrix, context: usize) -> Result<FeatureMatrix> {
    let width = feats.cols() * (2 * context + 1);
    let mut data = vec![0.0; feats.rows() * width];
    for (k, out) in data.chunks_exact_mut(width).enumerate() {
        splice_into(feats, k, context, out);
    }
    FeatureMatrix::new(data, feats.rows(), width, feats.frame_hop_sec())
}

/// Transforms applied in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformChain {
    pub stages: Vec<LinearTransform>,
}

impl TransformChain {
    pub fn new(stages: Vec<LinearTransform>) -> Result<Self> {
        for w in stages.windows(2) {
            if w[0].out_dim() != w[1].base_dim() {
                return Err(Error::DimMismatch {
                    context: "transform chain",
                    expected: w[1].base_dim(),
                    got: w[0].out_dim(),
                });
            }
        }
        Ok(Self { stages })
    }

    pub fn out_dim(&self) -> Option<usize> {
        self.stages.last().map(|t| t.out_dim())
    }

    pub fn apply(&self, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut cur = feats.clone();
        for t in &self.stages {
            cur = t.apply(&cur)?;
        }
        Ok(cur)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        for t in &self.stages {
            t.write_record(&mut w);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        let mut stages = Vec::new();
        while r.remaining() > 0 {
            stages.push(LinearTransform::read_record(&mut r)?);
        }
        if stages.is_empty() {
            // An empty file still has to announce the format.
            r.expect_magic(TRANSFORM_MAGIC)?;
        }
        Self::new(stages)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Principal angles (radians, ascending) between the row spaces of `a` and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = a.transpose().qr().q();
    let qb = b.transpose().qr().q();
    let s = (qa.transpose() * qb).svd(false, false).singular_values;
    let mut ang: Vec<f64> = s.iter().map(|v| v.clamp(-1.0, 1.0).acos()).collect();
    ang.sort_by(f64::total_cmp);
    ang
}

/// Makes the largest-magnitude entry of every row positive.
pub(crate) fn normalize_row_signs(m: &mut DMatrix<f64>) {
    for r in 0..m.nrows() {
        let mut best = 0.0f64;
        for c in 0..m.ncols() {
            if m[(r, c)].abs() > best.abs() {
                best = m[(r, c)];
            }
        }
        if best < 0.0 {
            for c in 0..m.ncols() {
                m[(r, c)] = -m[(r, c)];
            }
        }
    }
}
