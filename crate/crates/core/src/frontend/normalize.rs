//! Dynamic features and per-utterance normalization.

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::numeric::{std_normal_quantile, CompensatedSum};

pub const MVN_VARIANCE_FLOOR: f64 = 1e-10;

/// Regression deltas over +/- `window` frames with edge replication.
pub fn deltas(feat: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if window == 0 {
        return Err(Error::invalid("delta window must be positive"));
    }
    let k = feat.rows();
    let m = feat.cols();
    let denom = 2.0 * (1..=window).map(|t| (t * t) as f64).sum::<f64>();
    let mut out = vec![0.0; k * m];
    for i in 0..k {
        let o = &mut out[i * m..(i + 1) * m];
        for t in 1..=window {
            let fwd = feat.row((i + t).min(k - 1));
            let back = feat.row(i.saturating_sub(t));
            for d in 0..m {
                o[d] += t as f64 * (fwd[d] - back[d]);
            }
        }
        o.iter_mut().for_each(|v| *v /= denom);
    }
    FeatureMatrix::new(out, k, m, feat.frame_hop_sec())
}

/// Appends first- and second-order deltas: output dimension is 3x input.
pub fn append_deltas(feat: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    let need = 2 * window + 1;
    if feat.rows() < need {
        return Err(Error::TooShort {
            what: "frames for delta regression",
            needed: need,
            got: feat.rows(),
        });
    }
    let d1 = deltas(feat, window)?;
    let d2 = deltas(&d1, window)?;
    let m = feat.cols();
    let mut data = Vec::with_capacity(feat.rows() * 3 * m);
    for k in 0..feat.rows() {
        data.extend_from_slice(feat.row(k));
        data.extend_from_slice(d1.row(k));
        data.extend_from_slice(d2.row(k));
    }
    let out = FeatureMatrix::new(data, feat.rows(), 3 * m, feat.frame_hop_sec())?;
    match feat.tags() {
        Some(t) => out.with_tags(t.to_vec()),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose variance was raised to the floor.
    pub floored_dims: Vec<usize>,
}

impl MvnStats {
    pub fn floored(&self) -> bool {
        !self.floored_dims.is_empty()
    }
}

/// Per-dimension zero mean, unit variance (population variance).
pub fn mvn(feat: &FeatureMatrix) -> Result<(FeatureMatrix, MvnStats)> {
    if feat.rows() < 2 {
        return Err(Error::TooShort {
            what: "frames for MVN",
            needed: 2,
            got: feat.rows(),
        });
    }
    let k = feat.rows() as f64;
    let m = feat.cols();
    let mut mean = vec![0.0; m];
    let mut std = vec![0.0; m];
    let mut floored_dims = Vec::new();
    for d in 0..m {
        let mu = feat.iter_rows().map(|r| r[d]).collect::<CompensatedSum>().value() / k;
        let var = feat
            .iter_rows()
            .map(|r| (r[d] - mu).powi(2))
            .collect::<CompensatedSum>()
            .value()
            / k;
        let var = if var < MVN_VARIANCE_FLOOR {
            floored_dims.push(d);
            MVN_VARIANCE_FLOOR
        } else {
            var
        };
        mean[d] = mu;
        std[d] = var.sqrt();
    }
    if !floored_dims.is_empty() {
        log::warn!("MVN floored variance in dims {floored_dims:?}");
    }
    let mut data = Vec::with_capacity(feat.as_slice().len());
    for r in feat.iter_rows() {
        data.extend(r.iter().enumerate().map(|(d, v)| (v - mean[d]) / std[d]));
    }
    let mut out = FeatureMatrix::new(data, feat.rows(), m, feat.frame_hop_sec())?;
    if let Some(t) = feat.tags() {
        out = out.with_tags(t.to_vec())?;
    }
    Ok((
        out,
        MvnStats {
            mean,
            std,
            floored_dims,
        },
    ))
}

/// Short-term Gaussianization: each value is replaced by the standard
/// normal quantile of its rank within a sliding window of `window` frames.
///
/// The window is centered where possible and slides inward at the
/// utterance edges so it always spans `window` frames. Ties rank the earlier
/// frame lower. A window longer than the utterance shrinks to the largest
/// odd length that fits.
pub fn feature_warp(feat: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("warp window must be odd, got {window}")));
    }
    let k = feat.rows();
    if k == 0 {
        return Ok(feat.clone());
    }
    let len = if window <= k {
        window
    } else if k % 2 == 1 {
        k
    } else {
        k - 1
    };
    let half = len / 2;
    let table: Vec<f64> = (1..=len)
        .map(|r| std_normal_quantile((r as f64 - 0.5) / len as f64))
        .collect();
    let m = feat.cols();
    let mut out = vec![0.0; k * m];
    let mut col = vec![0.0; k];
    for d in 0..m {
        for (i, c) in col.iter_mut().enumerate() {
            *c = feat.get(i, d);
        }
        for i in 0..k {
            let start = i.saturating_sub(half).min(k - len);
            let x = col[i];
            let mut rank = 1;
            for (j, &y) in col[start..start + len].iter().enumerate() {
                let j = start + j;
                if y < x || (y == x && j < i) {
                    rank += 1;
                }
            }
            out[i * m + d] = table[rank - 1];
        }
    }
    let out = FeatureMatrix::new(out, k, m, feat.frame_hop_sec())?;
    match feat.tags() {
        Some(t) => out.with_tags(t.to_vec()),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::std_normal_cdf;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        FeatureMatrix::new(data, rows, cols, 0.01).unwrap()
    }

    #[test]
    fn constant_sequence_has_zero_deltas() {
        let f = FeatureMatrix::new(vec![3.0; 20], 10, 2, 0.01).unwrap();
        let out = append_deltas(&f, 2).unwrap();
        assert_eq!(out.cols(), 6);
        for r in out.iter_rows() {
            assert_eq!(&r[2..], &[0.0; 4]);
        }
    }

    #[test]
    fn ramp_has_unit_delta_inside() {
        let f = FeatureMatrix::new((0..12).map(|k| k as f64).collect(), 12, 1, 0.01).unwrap();
        let out = append_deltas(&f, 2).unwrap();
        for k in 2..10 {
            assert!((out.get(k, 1) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn deltas_match_direct_formula() {
        let f = random(50, 13, 4);
        let out = append_deltas(&f, 2).unwrap();
        let clamp = |i: isize| i.clamp(0, 49) as usize;
        let direct = |src: &dyn Fn(usize, usize) -> f64, k: usize, d: usize| {
            let mut num = 0.0;
            for t in 1..=2isize {
                num += t as f64 * (src(clamp(k as isize + t), d) - src(clamp(k as isize - t), d));
            }
            num / 10.0
        };
        let stat = |k: usize, d: usize| f.get(k, d);
        let d1 = |k: usize, d: usize| direct(&stat, k, d);
        for k in 0..50 {
            for d in 0..13 {
                assert!((out.get(k, 13 + d) - d1(k, d)).abs() < 1e-12);
                assert!((out.get(k, 26 + d) - direct(&d1, k, d)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deltas_need_enough_frames() {
        let f = random(4, 3, 1);
        assert!(matches!(append_deltas(&f, 2), Err(Error::TooShort { .. })));
    }

    #[test]
    fn mvn_normalizes_and_is_idempotent() {
        let mut f = random(200, 4, 9);
        for k in 0..200 {
            let r = f.row_mut(k);
            r[0] = r[0] * 5.0 + 3.0;
        }
        let (out, stats) = mvn(&f).unwrap();
        assert!(!stats.floored());
        for d in 0..4 {
            let c = out.column(d);
            let mu = c.iter().sum::<f64>() / 200.0;
            let var = c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 200.0;
            assert!(mu.abs() < 1e-10 && (var - 1.0).abs() < 1e-8);
        }
        let (twice, _) = mvn(&out).unwrap();
        for (a, b) in out.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mvn_floors_constant_column() {
        let mut f = random(30, 2, 1);
        for k in 0..30 {
            f.row_mut(k)[1] = 7.0;
        }
        let (out, stats) = mvn(&f).unwrap();
        assert_eq!(stats.floored_dims, vec![1]);
        assert!(out.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warp_extremes_and_median() {
        // window maximum and median of a 301-frame window
        let k = 301;
        let data: Vec<f64> = (0..k).map(|i| ((i * 37) % k) as f64).collect();
        let f = FeatureMatrix::new(data.clone(), k, 1, 0.01).unwrap();
        let out = feature_warp(&f, 301).unwrap();
        let imax = data.iter().position(|&v| v == 300.0).unwrap();
        let imed = data.iter().position(|&v| v == 150.0).unwrap();
        // scipy.stats.norm.ppf(300.5 / 301)
        assert!((out.get(imax, 0) - 2.936_231_848_817_515_6).abs() < 1e-6);
        assert!(out.get(imed, 0).abs() < 1e-12);
    }

    #[test]
    fn warp_ties_rank_earlier_frame_lower() {
        let f = FeatureMatrix::new(vec![1.0, 1.0, 1.0], 3, 1, 0.01).unwrap();
        let out = feature_warp(&f, 3).unwrap();
        let c = out.column(0);
        assert!(c[0] < c[1] && c[1] < c[2]);
    }

    #[test]
    fn warp_window_shrinks_to_utterance() {
        let f = random(10, 1, 3);
        let out = feature_warp(&f, 301).unwrap();
        // shrinks to 9: largest value maps to ppf(8.5/9)
        let c = out.column(0);
        let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((max - std_normal_quantile(8.5 / 9.0)).abs() < 1e-12);
        assert!(feature_warp(&f, 4).is_err());
    }

    fn ks_statistic(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = std_normal_cdf(x);
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn warped_output_is_close_to_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let exp = rand_distr::Exp::new(1.0).unwrap();
        let data: Vec<f64> = (0..3000 * 3).map(|_| exp.sample(&mut rng)).collect();
        let f = FeatureMatrix::new(data, 3000, 3, 0.01).unwrap();
        let out = feature_warp(&f, 301).unwrap();
        for d in 0..3 {
            let ks = ks_statistic(out.column(d));
            assert!(ks < 0.05, "dim {d}: KS {ks}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn warp_invariant_under_monotone_map(seed in any::<u64>(), rows in 1usize..80) {
            let f = random(rows, 2, seed);
            let g_data: Vec<f64> = f.as_slice().iter().map(|x| (x * 0.7).exp() * 3.0 - 1.0).collect();
            let g = FeatureMatrix::new(g_data, rows, 2, 0.01).unwrap();
            let a = feature_warp(&f, 31).unwrap();
            let b = feature_warp(&g, 31).unwrap();
            prop_assert_eq!(a.as_slice(), b.as_slice());
        }

        #[test]
        fn deltas_of_offset_are_zero(seed in any::<u64>(), off in -10.0f64..10.0) {
            let f = random(20, 3, seed);
            let shifted: Vec<f64> = f.as_slice().iter().map(|x| x + off).collect();
            let g = FeatureMatrix::new(shifted, 20, 3, 0.01).unwrap();
            let a = append_deltas(&f, 2).unwrap();
            let b = append_deltas(&g, 2).unwrap();
            for k in 0..20 {
                for d in 3..9 {
                    prop_assert!((a.get(k, d) - b.get(k, d)).abs() < 1e-9);
                }
            }
        }
    }
}
