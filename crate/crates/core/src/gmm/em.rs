use log::{debug, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DiagGmm, GmmStats};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::numeric::CompensatedSum;

/// Smallest variance floor regardless of data scale.
const ABSOLUTE_VAR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub target_components: usize,
    pub iters_per_stage: usize,
    pub final_iters: usize,
    /// Floor as a fraction of the global per-dimension variance.
    pub var_floor_rel: f64,
    /// Relative mean perturbation (in standard deviations) when splitting.
    pub split_offset: f64,
    /// Random frame subsample used for training when set.
    pub max_frames: Option<usize>,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            target_components: 256,
            iters_per_stage: 5,
            final_iters: 10,
            var_floor_rel: 1e-6,
            split_offset: 0.1,
            max_frames: None,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_components == 0 || !self.target_components.is_power_of_two() {
            return Err(Error::Config(format!(
                "target_components must be a power of two, got {}",
                self.target_components
            )));
        }
        if !(self.var_floor_rel > 0.0) || !(self.split_offset > 0.0) {
            return Err(Error::Config("var_floor_rel and split_offset must be positive".into()));
        }
        Ok(())
    }
}

/// Log-likelihood trace of one splitting stage. `loglik[0]` is the value
/// right after splitting, `loglik[j]` after the j-th EM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmStage {
    pub components: usize,
    pub loglik: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub model: DiagGmm,
    pub stages: Vec<EmStage>,
    pub frames_used: usize,
}

impl EmOutcome {
    /// True when no stage lost likelihood beyond `rel_tol`.
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.stages.iter().all(|s| {
            s.loglik
                .windows(2)
                .all(|w| w[1] >= w[0] - rel_tol * w[0].abs().max(1.0))
        })
    }
}

/// Trains a diagonal GMM by binary splitting from one global Gaussian.
pub fn em_train(x: &FeatureMatrix, cfg: &EmConfig) -> Result<EmOutcome> {
    cfg.validate()?;
    let n_target = cfg.target_components;
    let subsampled;
    let x = match cfg.max_frames {
        Some(cap) if x.rows() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, x.rows(), cap).into_vec();
            idx.sort_unstable();
            subsampled = x.select_rows(&idx);
            &subsampled
        }
        _ => x,
    };
    let k = x.rows();
    if k < n_target {
        return Err(Error::TooShort {
            what: "EM training frames",
            needed: n_target,
            got: k,
        });
    }
    if k < 10 * n_target {
        warn!("EM: {k} frames for {n_target} components, fewer than 10 per component");
    }
    let m = x.cols();
    let (mean, var) = global_moments(x);
    let floor: Vec<f64> = var
        .iter()
        .map(|v| (cfg.var_floor_rel * v).max(ABSOLUTE_VAR_FLOOR))
        .collect();
    let var0: Vec<f64> = var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();
    let mut model = DiagGmm::single(mean, var0, "ubm")?;
    let mut stages = vec![EmStage {
        components: 1,
        loglik: vec![model.loglik(x)?],
    }];

    while model.num_components() < n_target {
        model = split(&model, cfg.split_offset)?;
        let c = model.num_components();
        let iters = if c == n_target { cfg.final_iters } else { cfg.iters_per_stage };
        let mut trace = Vec::with_capacity(iters + 1);
        for _ in 0..iters {
            let (stats, ll) = model.e_step(x);
            trace.push(ll);
            model = m_step(&model, &stats, &floor, m)?;
        }
        trace.push(model.loglik(x)?);
        debug!("EM stage {c}: loglik {:?}", trace);
        stages.push(EmStage { components: c, loglik: trace });
    }
    Ok(EmOutcome {
        model,
        stages,
        frames_used: k,
    })
}

fn global_moments(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let k = x.rows() as f64;
    let mean: Vec<f64> = (0..x.cols())
        .map(|d| x.column(d).into_iter().collect::<CompensatedSum>().value() / k)
        .collect();
    let var = (0..x.cols())
        .map(|d| {
            x.column(d)
                .into_iter()
                .map(|v| (v - mean[d]) * (v - mean[d]))
                .collect::<CompensatedSum>()
                .value()
                / k
        })
        .collect();
    (mean, var)
}

fn split(g: &DiagGmm, offset: f64) -> Result<DiagGmm> {
    let m = g.dim();
    let n = g.num_components();
    let mut w = Vec::with_capacity(2 * n);
    let mut mu = Vec::with_capacity(2 * n * m);
    let mut var = Vec::with_capacity(2 * n * m);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            w.push(g.weights()[i] / 2.0);
            mu.extend(g.mean(i).iter().zip(g.variance(i)).map(|(u, v)| u + sign * offset * v.sqrt()));
            var.extend_from_slice(g.variance(i));
        }
    }
    DiagGmm::new(w, mu, var, m, g.label())
}

fn m_step(g: &DiagGmm, s: &GmmStats, floor: &[f64], m: usize) -> Result<DiagGmm> {
    let total: f64 = s.n.iter().sum();
    let n = g.num_components();
    let mut w = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n * m);
    let mut var = Vec::with_capacity(n * m);
    for i in 0..n {
        let ni = s.n[i];
        w.push(ni / total);
        if ni <= 0.0 {
            mu.extend_from_slice(g.mean(i));
            var.extend_from_slice(g.variance(i));
            continue;
        }
        for d in 0..m {
            let e1 = s.sum_x[i * m + d] / ni;
            let e2 = s.sum_x2[i * m + d] / ni;
            mu.push(e1);
            var.push((e2 - e1 * e1).max(floor[d]));
        }
    }
    let wsum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= wsum;
    }
    DiagGmm::new(w, mu, var, m, g.label())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn two_mode_data(k: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let data = (0..k)
            .map(|_| nrm.sample(&mut rng) + if rng.random_bool(0.5) { 3.0 } else { -3.0 })
            .collect();
        FeatureMatrix::new(data, k, 1, 0.01).unwrap()
    }

    #[test]
    fn single_component_is_closed_form() {
        let x = two_mode_data(1000, 1);
        let cfg = EmConfig { target_components: 1, ..Default::default() };
        let out = em_train(&x, &cfg).unwrap();
        let col = x.column(0);
        let mean = col.iter().sum::<f64>() / 1000.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1000.0;
        assert!((out.model.mean(0)[0] - mean).abs() < 1e-10);
        assert!((out.model.variance(0)[0] - var).abs() < 1e-10);
    }

    #[test]
    fn recovers_known_two_component_mixture() {
        let x = two_mode_data(20000, 2);
        let cfg = EmConfig { target_components: 2, final_iters: 200, ..Default::default() };
        let g = em_train(&x, &cfg).unwrap().model;
        let mut comps: Vec<(f64, f64)> = (0..2).map(|i| (g.mean(i)[0], g.weights()[i])).collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((comps[0].0 + 3.0).abs() < 0.1 && (comps[1].0 - 3.0).abs() < 0.1, "{comps:?}");
        assert!((comps[0].1 - 0.5).abs() < 0.05 && (comps[1].1 - 0.5).abs() < 0.05);
    }

    #[test]
    fn monotone_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..3000 * 3).map(|_| rng.random_range(-1.0..1.0f64).powi(3)).collect();
        let x = FeatureMatrix::new(data, 3000, 3, 0.01).unwrap();
        let cfg = EmConfig { target_components: 8, ..Default::default() };
        let a = em_train(&x, &cfg).unwrap();
        let b = em_train(&x, &cfg).unwrap();
        assert!(a.is_monotone(1e-8), "{:?}", a.stages);
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.stages.len(), 4);
        assert_eq!(a.stages[3].loglik.len(), 11);
    }

    #[test]
    fn subsampling_uses_seed() {
        let x = two_mode_data(2000, 4);
        let mk = |seed| EmConfig { target_components: 2, max_frames: Some(500), seed, ..Default::default() };
        let a = em_train(&x, &mk(1)).unwrap();
        assert_eq!(a.frames_used, 500);
        assert_eq!(a.model, em_train(&x, &mk(1)).unwrap().model);
        assert_ne!(a.model, em_train(&x, &mk(2)).unwrap().model);
    }

    #[test]
    fn rejects_bad_targets() {
        let x = two_mode_data(10, 5);
        assert!(em_train(&x, &EmConfig { target_components: 3, ..Default::default() }).is_err());
        assert!(matches!(
            em_train(&x, &EmConfig { target_components: 16, ..Default::default() }),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn constant_dimension_is_floored() {
        let data: Vec<f64> = (0..200).flat_map(|i| [i as f64 * 0.01, 2.0]).collect();
        let x = FeatureMatrix::new(data, 200, 2, 0.01).unwrap();
        let g = em_train(&x, &EmConfig { target_components: 2, ..Default::default() }).unwrap().model;
        assert!(g.variances().iter().all(|v| *v >= ABSOLUTE_VAR_FLOOR));
    }

    #[test]
    fn stats_total_mass_matches_frames() {
        let x = two_mode_data(500, 6);
        let g = em_train(&x, &EmConfig { target_components: 4, ..Default::default() }).unwrap().model;
        let s = g.accumulate_stats(&x).unwrap();
        assert!((s.n.iter().sum::<f64>() - 500.0).abs() < 1e-8);
    }
}
