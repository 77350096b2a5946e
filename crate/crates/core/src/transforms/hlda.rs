use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::scatter::generalized_eigen;
use super::{ClassStats, LinearTransform};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HldaInit {
    Identity,
    /// Whitening by the global covariance, rotated so that directions are
    /// ordered by between-class variance.
    Whitening,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HldaConfig {
    pub retained_dim: usize,
    pub context: usize,
    pub max_iters: usize,
    /// Relative objective gain below which iteration stops.
    pub tol: f64,
    pub var_floor: f64,
    pub init: HldaInit,
}

impl Default for HldaConfig {
    fn default() -> Self {
        Self {
            retained_dim: 20,
            context: 1,
            max_iters: 100,
            tol: 1e-6,
            var_floor: 1e-8,
            init: HldaInit::Whitening,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HldaFit {
    /// First `retained_dim` rows of `full`, centered on the global mean.
    pub transform: LinearTransform,
    pub full: DMatrix<f64>,
    /// Objective at the start and after each outer cycle.
    pub objective: Vec<f64>,
    /// Objective at `A = I`.
    pub identity_objective: f64,
    pub converged: bool,
}

struct Moments {
    counts: Vec<f64>,
    total: f64,
    class_cov: Vec<DMatrix<f64>>,
    total_cov: DMatrix<f64>,
}

impl Moments {
    fn new(stats: &ClassStats) -> Self {
        let sp = stats.scatter_pair();
        Self {
            counts: stats.counts.iter().map(|&c| c as f64).collect(),
            total: stats.total_frames() as f64,
            class_cov: (0..stats.num_classes()).map(|c| stats.class_covariance(c)).collect(),
            total_cov: sp.total(),
        }
    }
}

fn quad(a: &DMatrix<f64>, r: usize, m: &DMatrix<f64>) -> f64 {
    let row = a.row(r);
    (row * m * row.transpose())[(0, 0)]
}

fn objective(a: &DMatrix<f64>, mo: &Moments, p: usize, floor: f64) -> f64 {
    let n = a.nrows();
    let logdet = a.clone().lu().determinant().abs().ln();
    let mut obj = mo.total * logdet;
    for r in 0..n {
        if r < p {
            for (w, nj) in mo.class_cov.iter().zip(&mo.counts) {
                let s = quad(a, r, w).max(floor);
                obj -= 0.5 * nj * ((2.0 * PI * s).ln() + 1.0);
            }
        } else {
            let s = quad(a, r, &mo.total_cov).max(floor);
            obj -= 0.5 * mo.total * ((2.0 * PI * s).ln() + 1.0);
        }
    }
    obj
}

/// HLDA log-likelihood of the class statistics under the square transform `a`
/// with the first `p` rows class-dependent.
pub fn hlda_objective(a: &DMatrix<f64>, stats: &ClassStats, p: usize, var_floor: f64) -> f64 {
    objective(a, &Moments::new(stats), p, var_floor)
}

/// HLDA on spliced per-utterance features, one class label per utterance.
pub fn fit_hlda(utts: &[(&FeatureMatrix, usize)], num_classes: usize, cfg: &HldaConfig) -> Result<HldaFit> {
    let stats = ClassStats::from_utterances(utts, num_classes, cfg.context)?;
    fit_hlda_stats(&stats, cfg)
}

pub fn fit_hlda_stats(stats: &ClassStats, cfg: &HldaConfig) -> Result<HldaFit> {
    let n = stats.dim;
    let p = cfg.retained_dim;
    if p == 0 || p > n {
        return Err(Error::invalid(format!("HLDA retained_dim {p} must be in 1..={n}")));
    }
    for (c, &k) in stats.counts.iter().enumerate() {
        if k <= n {
            return Err(Error::ClassTooSmall { class: c, count: k, needed: n + 1 });
        }
    }
    let mo = Moments::new(stats);
    let floor = cfg.var_floor;
    let eye = DMatrix::identity(n, n);
    let identity_objective = objective(&eye, &mo, p, floor);
    let mut a = match cfg.init {
        HldaInit::Identity => eye,
        HldaInit::Whitening => {
            let sp = stats.scatter_pair();
            let (_, w) = generalized_eigen(&sp.s_b, &mo.total_cov)?;
            if objective(&w, &mo, p, floor) >= identity_objective { w } else { eye }
        }
    };
    let total_chol = mo.total_cov.clone().cholesky().ok_or(Error::SingularScatter)?;

    let mut trace = vec![objective(&a, &mo, p, floor)];
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let mut ainv = a.clone().try_inverse().ok_or(Error::SingularScatter)?;
        for r in 0..n {
            let c: DVector<f64> = ainv.column(r).into_owned();
            let ginv_c = if r < p {
                let mut g = DMatrix::zeros(n, n);
                for (w, nj) in mo.class_cov.iter().zip(&mo.counts) {
                    g += w * (nj / quad(&a, r, w).max(floor));
                }
                match g.cholesky() {
                    Some(ch) => ch.solve(&c),
                    None => continue,
                }
            } else {
                let s = quad(&a, r, &mo.total_cov).max(floor);
                total_chol.solve(&c) * (s / mo.total)
            };
            let denom = c.dot(&ginv_c);
            if !(denom > 0.0) {
                continue;
            }
            let new_row = ginv_c * (mo.total / denom).sqrt();
            let delta = &new_row - a.row(r).transpose();
            // Sherman-Morrison update of the inverse for a single-row change.
            let u = ainv.column(r).into_owned();
            let v = delta.transpose() * &ainv;
            let s = 1.0 + v[r];
            ainv -= (&u * &v) / s;
            a.set_row(r, &new_row.transpose());
        }
        let obj = objective(&a, &mo, p, floor);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if obj - prev < cfg.tol * prev.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("HLDA did not converge in {} cycles", cfg.max_iters);
    }
    let rows = a.rows(0, p).into_owned();
    let offset = -(&rows * stats.global_mean());
    Ok(HldaFit {
        transform: LinearTransform::new(rows, offset, cfg.context)?,
        full: a,
        objective: trace,
        identity_objective,
        converged,
    })
}
