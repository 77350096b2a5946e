use nalgebra::{DMatrix, DVector};

use super::pca::sorted_eigen;
use super::{normalize_row_signs, splice_into, LinearTransform};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::numeric::CompensatedSum;

const BLOCK: usize = 512;

/// Per-class counts, means and centered scatter sums.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub dim: usize,
    pub counts: Vec<usize>,
    pub means: Vec<DVector<f64>>,
    /// `sum_{x in s} (x - mean_s)(x - mean_s)^T`, not normalized.
    pub scatters: Vec<DMatrix<f64>>,
}

impl ClassStats {
    /// Frame-level labels, no splicing.
    pub fn from_frames(x: &FeatureMatrix, labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::DimMismatch {
                context: "class labels",
                expected: x.rows(),
                got: labels.len(),
            });
        }
        let d = x.cols();
        let frames = || (0..x.rows()).map(|k| (labels[k], x.row(k).to_vec()));
        Self::accumulate(d, num_classes, |f: &mut dyn FnMut(usize, &[f64])| {
            for (c, row) in frames() {
                f(c, &row);
            }
        })
    }

    /// One class per utterance; frames are spliced within each utterance.
    pub fn from_utterances(
        utts: &[(&FeatureMatrix, usize)],
        num_classes: usize,
        context: usize,
    ) -> Result<Self> {
        let base = utts.first().map(|(u, _)| u.cols()).ok_or(Error::Empty("utterances"))?;
        if let Some((u, _)) = utts.iter().find(|(u, _)| u.cols() != base) {
            return Err(Error::DimMismatch {
                context: "utterance features",
                expected: base,
                got: u.cols(),
            });
        }
        let d = base * (2 * context + 1);
        Self::accumulate(d, num_classes, |f: &mut dyn FnMut(usize, &[f64])| {
            let mut buf = vec![0.0; d];
            for (u, c) in utts {
                for k in 0..u.rows() {
                    splice_into(u, k, context, &mut buf);
                    f(*c, &buf);
                }
            }
        })
    }

    /// Two passes over `visit`: class means first, then centered scatter.
    fn accumulate<V>(d: usize, num_classes: usize, visit: V) -> Result<Self>
    where
        V: Fn(&mut dyn FnMut(usize, &[f64])),
    {
        let mut counts = vec![0usize; num_classes];
        let mut sums = vec![vec![CompensatedSum::new(); d]; num_classes];
        let mut bad_class = None;
        visit(&mut |c, row| {
            if c >= num_classes {
                bad_class = Some(c);
                return;
            }
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(row) {
                s.add(*v);
            }
        });
        if let Some(c) = bad_class {
            return Err(Error::invalid(format!("class index {c} out of range 0..{num_classes}")));
        }
        for (c, &n) in counts.iter().enumerate() {
            if n < 2 {
                return Err(Error::ClassTooSmall { class: c, count: n, needed: 2 });
            }
        }
        let means: Vec<DVector<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| DVector::from_iterator(d, s.iter().map(|v| v.value() / n as f64)))
            .collect();

        let mut acc = vec![vec![CompensatedSum::new(); d * d]; num_classes];
        let mut pending: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
        let flush = |c: usize, block: &mut Vec<f64>, acc: &mut Vec<Vec<CompensatedSum>>| {
            if block.is_empty() {
                return;
            }
            let m = DMatrix::from_row_slice(block.len() / d, d, block);
            let g = m.tr_mul(&m);
            for (a, v) in acc[c].iter_mut().zip(g.iter()) {
                a.add(*v);
            }
            block.clear();
        };
        visit(&mut |c, row| {
            let block = &mut pending[c];
            block.extend(row.iter().zip(means[c].iter()).map(|(x, m)| x - m));
            if block.len() >= BLOCK * d {
                flush(c, block, &mut acc);
            }
        });
        for c in 0..num_classes {
            let mut block = std::mem::take(&mut pending[c]);
            flush(c, &mut block, &mut acc);
        }
        let scatters = acc
            .iter()
            .map(|a| {
                let m = DMatrix::from_iterator(d, d, a.iter().map(|s| s.value()));
                (&m + m.transpose()) * 0.5
            })
            .collect();
        Ok(Self { dim: d, counts, means, scatters })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total_frames(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn global_mean(&self) -> DVector<f64> {
        let k = self.total_frames() as f64;
        let mut g = DVector::zeros(self.dim);
        for (m, &n) in self.means.iter().zip(&self.counts) {
            g += m * (n as f64 / k);
        }
        g
    }

    /// Class covariance `W_s = scatter_s / K_s`.
    pub fn class_covariance(&self, c: usize) -> DMatrix<f64> {
        &self.scatters[c] / self.counts[c] as f64
    }

    pub fn scatter_pair(&self) -> ScatterPair {
        let k = self.total_frames() as f64;
        let phi = self.global_mean();
        let mut sw = DMatrix::zeros(self.dim, self.dim);
        let mut sb = DMatrix::zeros(self.dim, self.dim);
        for c in 0..self.num_classes() {
            sw += &self.scatters[c];
            let dm = &self.means[c] - &phi;
            sb += &dm * dm.transpose() * self.counts[c] as f64;
        }
        sw /= k;
        sb /= k;
        ScatterPair {
            s_b: (&sb + sb.transpose()) * 0.5,
            s_w: (&sw + sw.transpose()) * 0.5,
            global_mean: phi,
            class_means: self.means.clone(),
            class_counts: self.counts.clone(),
        }
    }
}

/// Class-weighted between- and within-class scatter.
#[derive(Debug, Clone)]
pub struct ScatterPair {
    pub s_b: DMatrix<f64>,
    pub s_w: DMatrix<f64>,
    pub global_mean: DVector<f64>,
    pub class_means: Vec<DVector<f64>>,
    pub class_counts: Vec<usize>,
}

impl ScatterPair {
    pub fn total(&self) -> DMatrix<f64> {
        &self.s_b + &self.s_w
    }
}

pub fn scatter_matrices(x: &FeatureMatrix, labels: &[usize]) -> Result<ScatterPair> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::invalid("scatter matrices need at least two classes"));
    }
    Ok(ClassStats::from_frames(x, labels, classes)?.scatter_pair())
}

/// Generalized eigenvectors of `(S_B, S_W)` with `w^T S_W w = 1`, descending.
pub(crate) fn generalized_eigen(s_b: &DMatrix<f64>, s_w: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = s_w.clone().cholesky().ok_or(Error::SingularScatter)?;
    let l = chol.l();
    let diag_min = l.diagonal().min();
    let diag_max = l.diagonal().max();
    if !(diag_min > 1e-6 * diag_max) {
        return Err(Error::SingularScatter);
    }
    let linv_sb = l.solve_lower_triangular(s_b).ok_or(Error::SingularScatter)?;
    let m = l
        .solve_lower_triangular(&linv_sb.transpose())
        .ok_or(Error::SingularScatter)?;
    let m = (&m + m.transpose()) * 0.5;
    let (vals, v) = sorted_eigen(m);
    let w = l.transpose().solve_upper_triangular(&v).ok_or(Error::SingularScatter)?;
    Ok((vals, w.transpose()))
}

/// Fisher discriminant directions as rows, normalized so `w^T S_W w = 1`.
pub fn fit_lda(sp: &ScatterPair, out_dim: usize) -> Result<LinearTransform> {
    let s = sp.class_means.len();
    if out_dim == 0 || out_dim + 1 > s {
        return Err(Error::invalid(format!(
            "LDA out_dim {out_dim} must be in 1..={} for {s} classes",
            s.saturating_sub(1)
        )));
    }
    let (_, w) = generalized_eigen(&sp.s_b, &sp.s_w)?;
    let mut rows = w.rows(0, out_dim).into_owned();
    normalize_row_signs(&mut rows);
    let offset = -(&rows * &sp.global_mean);
    LinearTransform::new(rows, offset, 0)
}
