//! Diagonal-covariance Gaussian mixtures: scoring, sufficient statistics,
//! and EM training by binary splitting.

mod em;

pub use em::{em_train, EmConfig, EmOutcome, EmStage};

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::numeric::{log_sum_exp, CompensatedSum};

pub const MODEL_MAGIC: &str = "AGM1";

/// Frames per parallel work item. Results are merged in chunk order, so
/// output does not depend on thread scheduling.
pub(crate) const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    dim: usize,
    label: String,
    log_weights: Vec<f64>,
    log_norms: Vec<f64>,
    inv_vars: Vec<f64>,
}

impl DiagGmm {
    /// `means` and `variances` are N x M row-major.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        dim: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = weights.len();
        if n == 0 || dim == 0 {
            return Err(Error::invalid("GMM needs at least one component and one dimension"));
        }
        for (what, len) in [("GMM means", means.len()), ("GMM variances", variances.len())] {
            if len != n * dim {
                return Err(Error::invalid(format!("{what}: expected {} values, got {len}", n * dim)));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("GMM weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("GMM weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("GMM means must be finite"));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("GMM variances must be finite and positive"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let log_norms = variances
            .chunks_exact(dim)
            .map(|v| -0.5 * (dim as f64 * (2.0 * PI).ln() + v.iter().map(|s| s.ln()).sum::<f64>()))
            .collect();
        let inv_vars = variances.iter().map(|v| 1.0 / v).collect();
        Ok(Self {
            weights,
            means,
            variances,
            dim,
            label: label.into(),
            log_weights,
            log_norms,
            inv_vars,
        })
    }

    /// Single Gaussian.
    pub fn single(mean: Vec<f64>, variance: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let dim = mean.len();
        Self::new(vec![1.0], mean, variance, dim, label)
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variance(&self, i: usize) -> &[f64] {
        &self.variances[i * self.dim..(i + 1) * self.dim]
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimMismatch {
                context: "GMM input",
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    #[inline]
    fn log_component_unchecked(&self, i: usize, x: &[f64]) -> f64 {
        let mu = &self.means[i * self.dim..(i + 1) * self.dim];
        let iv = &self.inv_vars[i * self.dim..(i + 1) * self.dim];
        let mut q = 0.0;
        for d in 0..self.dim {
            let z = x[d] - mu[d];
            q += z * z * iv[d];
        }
        self.log_norms[i] - 0.5 * q
    }

    /// `log(w_i) + log p_i(x)` for every component.
    #[inline]
    fn log_joint_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = if self.weights[i] > 0.0 {
                self.log_weights[i] + self.log_component_unchecked(i, x)
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    pub fn log_component_density(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        if i >= self.num_components() {
            return Err(Error::invalid(format!("component {i} out of range")));
        }
        Ok(self.log_component_unchecked(i, x))
    }

    pub fn component_density(&self, i: usize, x: &[f64]) -> Result<f64> {
        Ok(self.log_component_density(i, x)?.exp())
    }

    /// `log p(x | model)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let mut buf = vec![0.0; self.num_components()];
        self.log_joint_into(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Per-frame log densities.
    pub fn frame_logliks(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_dim(x.cols())?;
        let chunks: Vec<Vec<f64>> = x
            .as_slice()
            .par_chunks(CHUNK * self.dim)
            .map(|chunk| {
                let mut buf = vec![0.0; self.num_components()];
                chunk
                    .chunks_exact(self.dim)
                    .map(|row| {
                        self.log_joint_into(row, &mut buf);
                        log_sum_exp(&buf)
                    })
                    .collect()
            })
            .collect();
        Ok(chunks.concat())
    }

    /// Total log-likelihood of the frames, assumed independent.
    pub fn loglik(&self, x: &FeatureMatrix) -> Result<f64> {
        if x.is_empty() {
            return Err(Error::Empty("feature frames"));
        }
        let per = self.frame_logliks(x)?;
        Ok(per.into_iter().collect::<CompensatedSum>().value())
    }

    /// Component posteriors `Pr(i | x)`, computed in the log domain.
    pub fn posterior_alignment(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut buf = vec![0.0; self.num_components()];
        self.log_joint_into(x, &mut buf);
        let lse = log_sum_exp(&buf);
        Ok(buf.iter().map(|l| (l - lse).exp()).collect())
    }

    /// Zeroth, first and second order statistics with respect to this model.
    pub fn accumulate_stats(&self, x: &FeatureMatrix) -> Result<GmmStats> {
        self.check_dim(x.cols())?;
        Ok(self.e_step(x).0)
    }

    /// Statistics plus total log-likelihood in one pass.
    pub(crate) fn e_step(&self, x: &FeatureMatrix) -> (GmmStats, f64) {
        let n = self.num_components();
        let m = self.dim;
        let parts: Vec<(StatsAccumulator, CompensatedSum)> = x
            .as_slice()
            .par_chunks(CHUNK * m)
            .map(|chunk| {
                let mut acc = StatsAccumulator::new(n, m);
                let mut ll = CompensatedSum::new();
                let mut buf = vec![0.0; n];
                for row in chunk.chunks_exact(m) {
                    self.log_joint_into(row, &mut buf);
                    let lse = log_sum_exp(&buf);
                    ll.add(lse);
                    for (i, &l) in buf.iter().enumerate() {
                        let p = (l - lse).exp();
                        if p > 0.0 {
                            acc.add(i, p, row);
                        }
                    }
                    acc.frames += 1;
                }
                (acc, ll)
            })
            .collect();
        let mut total = StatsAccumulator::new(n, m);
        let mut ll = CompensatedSum::new();
        for (a, l) in &parts {
            total.merge(a);
            ll.merge(l);
        }
        (total.finish(), ll.value())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(b"AGM1")
            .u32(self.num_components() as u32)
            .u32(self.dim as u32)
            .u32(self.label.len() as u32)
            .bytes(self.label.as_bytes())
            .f64s(&self.weights)
            .f64s(&self.means)
            .f64s(&self.variances);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(MODEL_MAGIC)?;
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let label_len = r.u32()? as usize;
        let label = std::str::from_utf8(r.bytes(label_len)?)
            .map_err(|_| r.malformed("label is not UTF-8"))?
            .to_string();
        let weights = r.f64s(n)?;
        let means = r.f64s(n * m)?;
        let variances = r.f64s(n * m)?;
        if r.remaining() != 0 {
            return Err(r.malformed("trailing bytes"));
        }
        Self::new(weights, means, variances, m, label).map_err(|e| r.malformed(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Compensated running sums behind [`GmmStats`].
#[derive(Debug, Clone)]
pub(crate) struct StatsAccumulator {
    dim: usize,
    n: Vec<CompensatedSum>,
    sx: Vec<CompensatedSum>,
    sx2: Vec<CompensatedSum>,
    frames: usize,
}

impl StatsAccumulator {
    fn new(n: usize, dim: usize) -> Self {
        Self {
            dim,
            n: vec![CompensatedSum::new(); n],
            sx: vec![CompensatedSum::new(); n * dim],
            sx2: vec![CompensatedSum::new(); n * dim],
            frames: 0,
        }
    }

    #[inline]
    fn add(&mut self, i: usize, p: f64, x: &[f64]) {
        self.n[i].add(p);
        let off = i * self.dim;
        for (d, &v) in x.iter().enumerate() {
            self.sx[off + d].add(p * v);
            self.sx2[off + d].add(p * v * v);
        }
    }

    fn merge(&mut self, o: &StatsAccumulator) {
        for (a, b) in self.n.iter_mut().zip(&o.n) {
            a.merge(b);
        }
        for (a, b) in self.sx.iter_mut().zip(&o.sx) {
            a.merge(b);
        }
        for (a, b) in self.sx2.iter_mut().zip(&o.sx2) {
            a.merge(b);
        }
        self.frames += o.frames;
    }

    fn finish(self) -> GmmStats {
        GmmStats {
            dim: self.dim,
            n: self.n.iter().map(|s| s.value()).collect(),
            sum_x: self.sx.iter().map(|s| s.value()).collect(),
            sum_x2: self.sx2.iter().map(|s| s.value()).collect(),
            total_frames: self.frames,
        }
    }
}

/// Posterior-weighted sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmStats {
    pub dim: usize,
    /// `n_i = sum_k Pr(i | x_k)`
    pub n: Vec<f64>,
    /// `sum_k Pr(i | x_k) x_k`, N x M row-major.
    pub sum_x: Vec<f64>,
    /// `sum_k Pr(i | x_k) x_k^2`, N x M row-major.
    pub sum_x2: Vec<f64>,
    pub total_frames: usize,
}

impl GmmStats {
    pub fn zeros(num_components: usize, dim: usize) -> Self {
        Self {
            dim,
            n: vec![0.0; num_components],
            sum_x: vec![0.0; num_components * dim],
            sum_x2: vec![0.0; num_components * dim],
            total_frames: 0,
        }
    }

    pub fn num_components(&self) -> usize {
        self.n.len()
    }

    /// Elementwise sum; statistics are additive over disjoint frame sets.
    pub fn merge(&mut self, other: &GmmStats) -> Result<()> {
        if other.n.len() != self.n.len() || other.dim != self.dim {
            return Err(Error::invalid("merging statistics of different shapes"));
        }
        for (a, b) in self.n.iter_mut().zip(&other.n) {
            *a += b;
        }
        for (a, b) in self.sum_x.iter_mut().zip(&other.sum_x) {
            *a += b;
        }
        for (a, b) in self.sum_x2.iter_mut().zip(&other.sum_x2) {
            *a += b;
        }
        self.total_frames += other.total_frames;
        Ok(())
    }

    /// `E_i(x)`, or `None` when component `i` received no mass.
    pub fn expected_x(&self, i: usize) -> Option<Vec<f64>> {
        let n = self.n[i];
        (n > 0.0).then(|| self.sum_x[i * self.dim..(i + 1) * self.dim].iter().map(|s| s / n).collect())
    }

    /// `E_i(x^2)`, or `None` when component `i` received no mass.
    pub fn expected_x2(&self, i: usize) -> Option<Vec<f64>> {
        let n = self.n[i];
        (n > 0.0).then(|| self.sum_x2[i * self.dim..(i + 1) * self.dim].iter().map(|s| s / n).collect())
    }
}
