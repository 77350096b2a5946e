use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{normalize_row_signs, LinearTransform};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::numeric::CompensatedSum;

#[derive(Debug, Clone)]
pub struct PcaFit {
    pub transform: LinearTransform,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
}

/// Sample covariance (1/K) and mean.
pub(crate) fn covariance(x: &FeatureMatrix) -> (DVector<f64>, DMatrix<f64>) {
    let d = x.cols();
    let k = x.rows() as f64;
    let mean = DVector::from_iterator(
        d,
        (0..d).map(|j| x.column(j).into_iter().collect::<CompensatedSum>().value() / k),
    );
    let mut acc = vec![CompensatedSum::new(); d * d];
    for block in x.as_slice().chunks(512 * d) {
        let rows = block.len() / d;
        let mut c = DMatrix::from_row_slice(rows, d, block);
        for mut row in c.row_iter_mut() {
            row -= mean.transpose();
        }
        let g = c.tr_mul(&c);
        for (a, v) in acc.iter_mut().zip(g.iter()) {
            a.add(*v);
        }
    }
    let mut cov = DMatrix::from_iterator(d, d, acc.iter().map(|s| s.value() / k));
    cov = (&cov + cov.transpose()) * 0.5;
    (mean, cov)
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue. Columns
/// of the returned matrix are the eigenvectors.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Leading `out_dim` principal directions; output is centered.
pub fn fit_pca(x: &FeatureMatrix, out_dim: usize) -> Result<PcaFit> {
    let d = x.cols();
    if out_dim == 0 || out_dim > d {
        return Err(Error::invalid(format!("PCA out_dim {out_dim} must be in 1..={d}")));
    }
    if x.rows() <= d {
        return Err(Error::TooShort {
            what: "PCA frames",
            needed: d + 1,
            got: x.rows(),
        });
    }
    let (mean, cov) = covariance(x);
    let (vals, vecs) = sorted_eigen(cov);
    let mut r = vecs.columns(0, out_dim).transpose();
    normalize_row_signs(&mut r);
    let offset = -(&r * &mean);
    Ok(PcaFit {
        transform: LinearTransform::new(r, offset, 0)?,
        eigenvalues: vals,
    })
}
