use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::DiagGmm;
use crate::numeric::CompensatedSum;

/// Samples per random stream.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HellingerConfig {
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for HellingerConfig {
    fn default() -> Self {
        Self {
            num_samples: 50_000,
            seed: 0,
        }
    }
}

fn check_dims(p: &DiagGmm, q: &DiagGmm) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            context: "Hellinger distance",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

fn from_bc(bc: f64) -> f64 {
    (1.0 - bc.clamp(0.0, 1.0)).sqrt().clamp(0.0, 1.0)
}

/// Exact distance between the first components of `p` and `q`.
pub fn hellinger_closed_form(p: &DiagGmm, q: &DiagGmm) -> Result<f64> {
    check_dims(p, q)?;
    let mut log_bc = 0.0;
    for d in 0..p.dim() {
        let (m1, v1) = (p.mean(0)[d], p.variance(0)[d]);
        let (m2, v2) = (q.mean(0)[d], q.variance(0)[d]);
        let s = v1 + v2;
        log_bc += 0.5 * (2.0 * (v1 * v2).sqrt() / s).ln() - (m1 - m2).powi(2) / (4.0 * s);
    }
    Ok(from_bc(log_bc.exp()))
}

fn draw(g: &DiagGmm, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut comp = g.num_components() - 1;
    for (i, w) in g.weights().iter().enumerate() {
        acc += w;
        if u < acc {
            comp = i;
            break;
        }
    }
    for (d, o) in out.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *o = g.mean(comp)[d] + g.variance(comp)[d].sqrt() * z;
    }
}

/// Importance-sampled estimate drawing from the equal mixture of `p` and `q`.
/// Each block of samples uses its own stream of the seeded generator, so the
/// value does not depend on thread count.
pub fn hellinger_mc(p: &DiagGmm, q: &DiagGmm, cfg: &HellingerConfig) -> Result<f64> {
    check_dims(p, q)?;
    if cfg.num_samples == 0 {
        return Err(Error::invalid("Hellinger estimate needs samples"));
    }
    let chunks = cfg.num_samples.div_ceil(CHUNK);
    let ln2 = std::f64::consts::LN_2;
    let parts: Vec<CompensatedSum> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(cfg.num_samples - c * CHUNK);
            let mut z = vec![0.0; p.dim()];
            let mut sum = CompensatedSum::new();
            for _ in 0..n {
                if rng.random_bool(0.5) {
                    draw(p, &mut rng, &mut z);
                } else {
                    draw(q, &mut rng, &mut z);
                }
                let lp = p.log_density(&z).unwrap_or(f64::NEG_INFINITY);
                let lq = q.log_density(&z).unwrap_or(f64::NEG_INFINITY);
                let hi = lp.max(lq);
                let lm = hi + ((lp - hi).exp() + (lq - hi).exp()).ln() - ln2;
                sum.add((0.5 * (lp + lq) - lm).exp());
            }
            sum
        })
        .collect();
    let mut total = CompensatedSum::new();
    for s in &parts {
        total.merge(s);
    }
    Ok(from_bc(total.value() / cfg.num_samples as f64))
}

/// Closed form when both models are single Gaussians, sampling otherwise.
pub fn hellinger_gmm(p: &DiagGmm, q: &DiagGmm, cfg: &HellingerConfig) -> Result<f64> {
    if p.num_components() == 1 && q.num_components() == 1 {
        hellinger_closed_form(p, q)
    } else {
        hellinger_mc(p, q, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(mu: f64, var: f64) -> DiagGmm {
        DiagGmm::single(vec![mu], vec![var], "g").unwrap()
    }

    /// Numerical integration of sqrt(p q) on a fine grid.
    fn quadrature_bc(p: &DiagGmm, q: &DiagGmm) -> f64 {
        let (lo, hi, n) = (-30.0, 30.0, 600_000);
        let h = (hi - lo) / n as f64;
        (0..n)
            .map(|i| {
                let x = [lo + (i as f64 + 0.5) * h];
                (0.5 * (p.log_density(&x).unwrap() + q.log_density(&x).unwrap())).exp() * h
            })
            .sum()
    }

    #[test]
    fn closed_form_reference_value() {
        let h = hellinger_closed_form(&single(0.0, 1.0), &single(4.0, 1.0)).unwrap();
        assert!((h - (1.0 - (-2.0f64).exp()).sqrt()).abs() < 1e-12);
        assert!((h - 0.9298).abs() < 1e-4);
        let (p, q) = (single(0.5, 0.7), single(-1.0, 2.5));
        let bc = quadrature_bc(&p, &q);
        assert!((hellinger_closed_form(&p, &q).unwrap() - (1.0 - bc).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let (p, q) = (single(0.0, 1.0), single(4.0, 1.0));
        let mc = hellinger_mc(&p, &q, &HellingerConfig { num_samples: 50_000, seed: 3 }).unwrap();
        assert!((mc - 0.92987).abs() < 0.01, "{mc}");
    }

    #[test]
    fn identical_models_near_zero() {
        let p = DiagGmm::new(vec![0.3, 0.7], vec![0.0, 1.0, 3.0, -1.0], vec![1.0, 0.5, 2.0, 1.0], 2, "p").unwrap();
        let h = hellinger_mc(&p, &p, &HellingerConfig { num_samples: 100_000, seed: 1 }).unwrap();
        assert!(h < 0.02, "{h}");
    }

    #[test]
    fn symmetric_up_to_noise() {
        let p = DiagGmm::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![0.5, 0.5], 1, "p").unwrap();
        let q = DiagGmm::new(vec![0.2, 0.8], vec![0.0, 2.0], vec![1.0, 0.3], 1, "q").unwrap();
        let a = hellinger_mc(&p, &q, &HellingerConfig { num_samples: 50_000, seed: 10 }).unwrap();
        let b = hellinger_mc(&q, &p, &HellingerConfig { num_samples: 50_000, seed: 11 }).unwrap();
        assert!((a - b).abs() < 0.01);
        let bc = quadrature_bc(&p, &q);
        assert!((a - (1.0 - bc).sqrt()).abs() < 0.01);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = DiagGmm::new(vec![0.5, 0.5], vec![-1.0, 1.0], vec![0.5, 0.5], 1, "p").unwrap();
        let q = single(0.3, 1.0);
        let cfg = HellingerConfig { num_samples: 10_000, seed: 5 };
        assert_eq!(hellinger_mc(&p, &q, &cfg).unwrap(), hellinger_mc(&p, &q, &cfg).unwrap());
        assert!(hellinger_mc(&p, &DiagGmm::single(vec![0.0, 0.0], vec![1.0, 1.0], "x").unwrap(), &cfg).is_err());
    }

    #[test]
    fn dispatcher_uses_closed_form_for_single_gaussians() {
        let (p, q) = (single(0.0, 1.0), single(1.0, 2.0));
        let cfg = HellingerConfig::default();
        assert_eq!(hellinger_gmm(&p, &q, &cfg).unwrap(), hellinger_closed_form(&p, &q).unwrap());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn bounded(mu in -20.0f64..20.0, v in 0.01f64..10.0, seed in 0u64..100) {
            let p = DiagGmm::new(vec![0.5, 0.5], vec![0.0, mu], vec![1.0, v], 1, "p").unwrap();
            let q = single(-mu, v);
            let h = hellinger_mc(&p, &q, &HellingerConfig { num_samples: 2000, seed }).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&h));
        }
    }
}
