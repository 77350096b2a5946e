//! MAP adaptation of a background model towards class data.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::gmm::{DiagGmm, GmmStats};

/// Variance floor applied to adapted variances, in normalized feature units.
pub const ADAPT_VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub relevance_weight: f64,
    pub relevance_mean: f64,
    pub relevance_var: f64,
    pub adapt_weights: bool,
    pub adapt_means: bool,
    pub adapt_vars: bool,
    pub var_floor: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            relevance_weight: 16.0,
            relevance_mean: 16.0,
            relevance_var: 16.0,
            adapt_weights: true,
            adapt_means: true,
            adapt_vars: true,
            var_floor: ADAPT_VAR_FLOOR,
        }
    }
}

impl AdaptConfig {
    /// Same relevance factor for every family.
    pub fn with_relevance(r: f64) -> Self {
        Self {
            relevance_weight: r,
            relevance_mean: r,
            relevance_var: r,
            ..Self::default()
        }
    }

    pub fn means_only(r: f64) -> Self {
        Self {
            adapt_weights: false,
            adapt_vars: false,
            ..Self::with_relevance(r)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("relevance_weight", self.relevance_weight),
            ("relevance_mean", self.relevance_mean),
            ("relevance_var", self.relevance_var),
        ] {
            if !(r > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {r}")));
            }
        }
        if !(self.var_floor > 0.0) {
            return Err(Error::Config("var_floor must be positive".into()));
        }
        Ok(())
    }
}

/// `n / (n + r)`; zero mass or infinite relevance give 0.
pub fn adaptation_coefficient(n: f64, r: f64) -> f64 {
    if n <= 0.0 || r.is_infinite() {
        0.0
    } else {
        n / (n + r)
    }
}

#[derive(Debug, Clone)]
pub struct Adapted {
    pub model: DiagGmm,
    /// Variance entries that needed flooring.
    pub floored: usize,
}

pub fn map_adapt(ubm: &DiagGmm, x: &FeatureMatrix, cfg: &AdaptConfig) -> Result<DiagGmm> {
    if x.is_empty() {
        return Err(Error::Empty("adaptation frames"));
    }
    let stats = ubm.accumulate_stats(x)?;
    Ok(map_adapt_from_stats(ubm, &stats, cfg)?.model)
}

pub fn map_adapt_from_stats(ubm: &DiagGmm, s: &GmmStats, cfg: &AdaptConfig) -> Result<Adapted> {
    cfg.validate()?;
    let n = ubm.num_components();
    let m = ubm.dim();
    if s.num_components() != n || s.dim != m {
        return Err(Error::invalid("statistics do not match the background model"));
    }
    let total = s.total_frames as f64;
    let mut weights = ubm.weights().to_vec();
    let mut means = ubm.means().to_vec();
    let mut vars = ubm.variances().to_vec();
    let mut floored = 0;
    for i in 0..n {
        let ni = s.n[i];
        if cfg.adapt_weights && total > 0.0 {
            let a = adaptation_coefficient(ni, cfg.relevance_weight);
            weights[i] = a * ni / total + (1.0 - a) * ubm.weights()[i];
        }
        let (Some(ex), Some(ex2)) = (s.expected_x(i), s.expected_x2(i)) else {
            continue;
        };
        let am = adaptation_coefficient(ni, cfg.relevance_mean);
        let av = adaptation_coefficient(ni, cfg.relevance_var);
        let mu0 = ubm.mean(i);
        let var0 = ubm.variance(i);
        for d in 0..m {
            let new_mu = if cfg.adapt_means { am * ex[d] + (1.0 - am) * mu0[d] } else { mu0[d] };
            if cfg.adapt_vars && av > 0.0 {
                let v = av * ex2[d] + (1.0 - av) * (var0[d] + mu0[d] * mu0[d]) - new_mu * new_mu;
                vars[i * m + d] = if v < cfg.var_floor {
                    floored += 1;
                    cfg.var_floor
                } else {
                    v
                };
            }
            means[i * m + d] = new_mu;
        }
    }
    if floored > 0 {
        warn!("MAP adaptation floored {floored} variance entries");
    }
    if cfg.adapt_weights {
        let gamma: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= gamma;
        }
    }
    Ok(Adapted {
        model: DiagGmm::new(weights, means, vars, m, ubm.label())?,
        floored,
    })
}

/// One adapted model per accent, in input order.
pub fn adapt_all_accents(
    ubm: &DiagGmm,
    per_accent: &[(String, FeatureMatrix)],
    cfg: &AdaptConfig,
) -> Result<Vec<DiagGmm>> {
    if per_accent.len() < 2 {
        return Err(Error::invalid("adaptation needs at least two accents"));
    }
    if let Some((label, _)) = per_accent.iter().find(|(_, x)| x.is_empty()) {
        return Err(Error::EmptyAccent(label.clone()));
    }
    per_accent
        .par_iter()
        .map(|(label, x)| Ok(map_adapt(ubm, x, cfg)?.with_label(label.clone())))
        .collect()
}
