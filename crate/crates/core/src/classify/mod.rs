//! Accent decisions: full-utterance scoring and the vowel-weighted ensemble.

mod hellinger;
mod report;

pub use hellinger::{hellinger_closed_form, hellinger_gmm, hellinger_mc, HellingerConfig};
pub use report::{AccentScore, EvalReport};

use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::gmm::DiagGmm;
use crate::numeric::argmax_first;
use crate::vowels::{filter_by_confidence, pool_capped, VowelPools, VowelSegment, NUM_VOWELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Vowel,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Vowel => "vowel",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "vowel" => Ok(Mode::Vowel),
            _ => Err(Error::invalid(format!("unknown mode `{s}` (baseline or vowel)"))),
        }
    }
}

/// How per-vowel Hellinger distances become a discriminativeness value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discriminativeness {
    MeanDistance,
    ReciprocalMean,
}

/// Models per accent, in decision order: earlier accents win ties.
#[derive(Debug, Clone, Default)]
pub struct AccentModelSet {
    pub accents: Vec<String>,
    pub baseline: Option<Vec<DiagGmm>>,
    /// `grid[s][t]`: accent `s`, vowel `t`.
    pub vowel_grid: Option<Vec<Vec<Option<DiagGmm>>>>,
    pub vowel_weights: Option<Vec<f64>>,
}

impl AccentModelSet {
    pub fn new(accents: Vec<String>) -> Result<Self> {
        if accents.is_empty() {
            return Err(Error::Empty("accent list"));
        }
        for (i, a) in accents.iter().enumerate() {
            if accents[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate accent `{a}`")));
            }
        }
        Ok(Self {
            accents,
            ..Self::default()
        })
    }

    pub fn num_accents(&self) -> usize {
        self.accents.len()
    }

    pub fn accent_index(&self, label: &str) -> Result<usize> {
        self.accents
            .iter()
            .position(|a| a == label)
            .ok_or_else(|| Error::UnknownAccent(label.to_string()))
    }

    pub fn with_baseline(mut self, models: Vec<DiagGmm>) -> Result<Self> {
        if models.len() != self.num_accents() {
            return Err(Error::DimMismatch {
                context: "baseline models",
                expected: self.num_accents(),
                got: models.len(),
            });
        }
        check_same_dim(models.iter())?;
        self.baseline = Some(models);
        Ok(self)
    }

    pub fn with_vowel_grid(mut self, grid: Vec<Vec<Option<DiagGmm>>>) -> Result<Self> {
        if grid.len() != self.num_accents() || grid.iter().any(|row| row.len() != NUM_VOWELS) {
            return Err(Error::invalid(format!(
                "vowel grid must be {} x {NUM_VOWELS}",
                self.num_accents()
            )));
        }
        check_same_dim(grid.iter().flatten().flatten())?;
        self.vowel_grid = Some(grid);
        Ok(self)
    }

    pub fn with_vowel_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != NUM_VOWELS || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("vowel weights must be 15 finite non-negative values"));
        }
        self.vowel_weights = Some(w);
        Ok(self)
    }

    /// Vowels with a model for every accent.
    pub fn usable_vowels(&self) -> [bool; NUM_VOWELS] {
        match &self.vowel_grid {
            Some(g) => std::array::from_fn(|t| g.iter().all(|row| row[t].is_some())),
            None => [false; NUM_VOWELS],
        }
    }

    fn grid(&self) -> Result<&Vec<Vec<Option<DiagGmm>>>> {
        self.vowel_grid
            .as_ref()
            .ok_or_else(|| Error::invalid("vowel models are not loaded"))
    }
}

fn check_same_dim<'a>(mut models: impl Iterator<Item = &'a DiagGmm>) -> Result<()> {
    if let Some(first) = models.next() {
        for m in models {
            if m.dim() != first.dim() {
                return Err(Error::DimMismatch {
                    context: "accent models",
                    expected: first.dim(),
                    got: m.dim(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub chosen: usize,
    pub chosen_accent: String,
    pub scores: Vec<f64>,
    /// Unweighted log-likelihood sums, `[accent][vowel]`.
    pub per_vowel_scores: Option<Vec<Vec<f64>>>,
    pub frames_used: usize,
}

fn decide(ms: &AccentModelSet, scores: Vec<f64>, per_vowel: Option<Vec<Vec<f64>>>, frames: usize) -> ClassificationResult {
    let chosen = argmax_first(&scores).unwrap_or(0);
    ClassificationResult {
        chosen,
        chosen_accent: ms.accents[chosen].clone(),
        scores,
        per_vowel_scores: per_vowel,
        frames_used: frames,
    }
}

/// Equal priors: the accent with the highest total log-likelihood.
pub fn classify_baseline(ms: &AccentModelSet, x: &FeatureMatrix) -> Result<ClassificationResult> {
    let models = ms
        .baseline
        .as_ref()
        .ok_or_else(|| Error::invalid("baseline models are not loaded"))?;
    if x.is_empty() {
        return Err(Error::Empty("feature frames"));
    }
    let scores = models.iter().map(|m| m.loglik(x)).collect::<Result<Vec<_>>>()?;
    Ok(decide(ms, scores, None, x.rows()))
}

/// Weighted sum over vowels of each accent's per-vowel log-likelihood.
pub fn classify_vowel_weighted(
    ms: &AccentModelSet,
    pools: &VowelPools,
    per_frame_normalize: bool,
) -> Result<ClassificationResult> {
    let grid = ms.grid()?;
    let w = ms
        .vowel_weights
        .as_ref()
        .ok_or_else(|| Error::invalid("vowel weights are not set"))?;
    let usable = ms.usable_vowels();
    let s_count = ms.num_accents();
    let mut scores = vec![0.0; s_count];
    let mut per_vowel = vec![vec![0.0; NUM_VOWELS]; s_count];
    let mut frames = 0;
    for t in 0..NUM_VOWELS {
        let x = &pools.pools[t];
        if !usable[t] || x.is_empty() {
            continue;
        }
        frames += x.rows();
        for s in 0..s_count {
            let model = grid[s][t].as_ref().expect("usable vowel has all models");
            let mut ll = model.loglik(x)?;
            if per_frame_normalize {
                ll /= x.rows() as f64;
            }
            per_vowel[s][t] = ll;
            scores[s] += w[t] * ll;
        }
    }
    if frames == 0 {
        return Err(Error::NoVowelEvidence);
    }
    Ok(decide(ms, scores, Some(per_vowel), frames))
}

fn pair_seed(seed: u64, t: usize, a: usize, b: usize) -> u64 {
    let tag = ((t as u64) << 32) | ((a as u64) << 16) | b as u64;
    seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-vowel mean pairwise Hellinger distance among accents (or its
/// reciprocal). Vowels lacking a model for some accent get 0.
pub fn vowel_discriminativeness(
    grid: &[Vec<Option<DiagGmm>>],
    mode: Discriminativeness,
    cfg: &HellingerConfig,
) -> Result<Vec<f64>> {
    let s = grid.len();
    if s < 2 {
        return Err(Error::invalid("discriminativeness needs at least two accents"));
    }
    let mut d = vec![0.0; NUM_VOWELS];
    for (t, dt) in d.iter_mut().enumerate() {
        let models: Option<Vec<&DiagGmm>> = grid.iter().map(|row| row.get(t).and_then(|m| m.as_ref())).collect();
        let Some(models) = models else {
            continue;
        };
        let pairs: Vec<(usize, usize)> = (0..s).flat_map(|a| (a + 1..s).map(move |b| (a, b))).collect();
        let dists = pairs
            .par_iter()
            .map(|&(a, b)| {
                let c = HellingerConfig {
                    seed: pair_seed(cfg.seed, t, a, b),
                    ..cfg.clone()
                };
                hellinger_gmm(models[a], models[b], &c)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        *dt = match mode {
            Discriminativeness::MeanDistance => mean,
            Discriminativeness::ReciprocalMean if mean > 0.0 => 1.0 / mean,
            Discriminativeness::ReciprocalMean => {
                warn!("vowel {t}: zero mean distance, excluded");
                0.0
            }
        };
    }
    Ok(d)
}

/// `w_t = r_t d_t`, normalized to sum 1.
pub fn vowel_weights(r: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if r.len() != NUM_VOWELS || d.len() != NUM_VOWELS {
        return Err(Error::invalid("popularity and discriminativeness must have 15 entries"));
    }
    if r.iter().chain(d).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("popularity and discriminativeness must be non-negative"));
    }
    let w: Vec<f64> = r.iter().zip(d).map(|(a, b)| a * b).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("all vowel weights are zero"));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// A labeled utterance for evaluation.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub accent: String,
    pub features: FeatureMatrix,
    pub segments: Vec<VowelSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringOptions {
    pub mode: Mode,
    /// Frames scored per utterance, from the start.
    pub max_frames: Option<usize>,
    pub confidence_threshold: f64,
    pub per_frame_normalize: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            max_frames: Some(2000),
            confidence_threshold: f64::NEG_INFINITY,
            per_frame_normalize: false,
        }
    }
}

/// Decision for one item. In vowel mode an utterance without usable vowel
/// frames scores 0 for every accent.
pub fn classify_item(ms: &AccentModelSet, item: &EvalItem, opts: &ScoringOptions) -> Result<(ClassificationResult, bool)> {
    match opts.mode {
        Mode::Baseline => {
            let x = match opts.max_frames {
                Some(cap) => item.features.truncated(cap),
                None => item.features.clone(),
            };
            Ok((classify_baseline(ms, &x)?, true))
        }
        Mode::Vowel => {
            let segs = filter_by_confidence(&item.segments, opts.confidence_threshold);
            let pools = pool_capped(&item.features, &segs, opts.max_frames)?;
            match classify_vowel_weighted(ms, &pools, opts.per_frame_normalize) {
                Ok(r) => Ok((r, true)),
                Err(Error::NoVowelEvidence) => Ok((decide(ms, vec![0.0; ms.num_accents()], None, 0), false)),
                Err(e) => Err(e),
            }
        }
    }
}

pub fn evaluate(
    ms: &AccentModelSet,
    items: &[EvalItem],
    opts: &ScoringOptions,
    feature_tag: &str,
    seed: u64,
) -> Result<EvalReport> {
    let truth = items
        .iter()
        .map(|it| ms.accent_index(&it.accent))
        .collect::<Result<Vec<_>>>()?;
    let decisions = items
        .par_iter()
        .map(|it| classify_item(ms, it, opts))
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<usize> = decisions.iter().map(|(r, _)| r.chosen).collect();
    let no_evidence = decisions.iter().filter(|(_, ok)| !ok).count();
    if no_evidence > 0 {
        warn!("{no_evidence} utterances had no vowel evidence");
    }
    Ok(EvalReport::from_decisions(
        &ms.accents,
        &truth,
        &predicted,
        opts.mode,
        feature_tag,
        seed,
        no_evidence,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// `(threshold, dev accuracy)` per grid value, ascending.
    pub curve: Vec<(f64, f64)>,
}

/// Grid value with the best vowel-mode dev accuracy; ties go to the lowest.
pub fn calibrate_threshold(
    ms: &AccentModelSet,
    dev: &[EvalItem],
    grid: &[f64],
    opts: &ScoringOptions,
) -> Result<Calibration> {
    if grid.is_empty() {
        return Err(Error::Empty("threshold grid"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut curve = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for &th in &sorted {
        let o = ScoringOptions {
            mode: Mode::Vowel,
            confidence_threshold: th,
            ..opts.clone()
        };
        let acc = evaluate(ms, dev, &o, "", 0)?.accuracy;
        curve.push((th, acc));
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((th, acc));
        }
    }
    Ok(Calibration {
        threshold: best.expect("non-empty grid").0,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vowels::Vowel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn g(mu: f64) -> DiagGmm {
        DiagGmm::single(vec![mu], vec![1.0], "m").unwrap()
    }

    fn frames(mu: f64, k: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(mu, 1.0).unwrap();
        FeatureMatrix::new((0..k).map(|_| n.sample(&mut rng)).collect(), k, 1, 0.01).unwrap()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    fn baseline_set(mus: &[f64]) -> AccentModelSet {
        AccentModelSet::new(names(mus.len()))
            .unwrap()
            .with_baseline(mus.iter().map(|&m| g(m)).collect())
            .unwrap()
    }

    #[test]
    fn dominant_model_wins_and_ties_go_first() {
        let ms = baseline_set(&[0.0, 5.0]);
        let x = frames(0.0, 20, 1);
        assert_eq!(classify_baseline(&ms, &x).unwrap().chosen, 0);
        let tie = baseline_set(&[1.0, 1.0]);
        assert_eq!(classify_baseline(&tie, &x).unwrap().chosen, 0);
        assert!(classify_baseline(&ms, &FeatureMatrix::empty(1, 0.01)).is_err());
    }

    #[test]
    fn separated_generators_classify_correctly() {
        let mus = [-6.0, 0.0, 6.0];
        let ms = baseline_set(&mus);
        let mut correct = 0;
        for trial in 0..200 {
            let s = trial % 3;
            let x = frames(mus[s], 30, trial as u64);
            correct += usize::from(classify_baseline(&ms, &x).unwrap().chosen == s);
        }
        assert!(correct >= 198);
    }

    fn grid_from(cols: &[(Vowel, Vec<f64>)], s: usize) -> Vec<Vec<Option<DiagGmm>>> {
        let mut grid = vec![vec![None; NUM_VOWELS]; s];
        for (v, mus) in cols {
            for (a, &m) in mus.iter().enumerate() {
                grid[a][v.index()] = Some(g(m));
            }
        }
        grid
    }

    #[test]
    fn single_vowel_matches_baseline_on_that_column() {
        let grid = grid_from(&[(Vowel::Aa, vec![0.0, 2.0, -2.0]), (Vowel::Iy, vec![9.0, 9.0, 9.0])], 3);
        let ms = AccentModelSet::new(names(3))
            .unwrap()
            .with_vowel_grid(grid)
            .unwrap()
            .with_vowel_weights(vec![1.0 / 15.0; 15])
            .unwrap()
            .with_baseline(vec![g(0.0), g(2.0), g(-2.0)])
            .unwrap();
        let mut pools = VowelPools::empty(1, 0.01);
        pools.pools[Vowel::Aa.index()] = frames(1.8, 40, 2);
        let v = classify_vowel_weighted(&ms, &pools, false).unwrap();
        let b = classify_baseline(&ms, &pools.pools[Vowel::Aa.index()]).unwrap();
        assert_eq!(v.chosen, b.chosen);
        assert_eq!(v.chosen, 1);
        assert_eq!(v.frames_used, 40);
    }

    #[test]
    fn concentrated_weight_ignores_other_vowels() {
        let grid = grid_from(&[(Vowel::Aa, vec![0.0, 3.0]), (Vowel::Iy, vec![3.0, 0.0])], 2);
        let mut w = vec![0.0; 15];
        w[Vowel::Iy.index()] = 1.0;
        let ms = AccentModelSet::new(names(2)).unwrap().with_vowel_grid(grid).unwrap().with_vowel_weights(w).unwrap();
        let mut pools = VowelPools::empty(1, 0.01);
        pools.pools[Vowel::Aa.index()] = frames(3.0, 500, 3);
        pools.pools[Vowel::Iy.index()] = frames(0.2, 5, 4);
        assert_eq!(classify_vowel_weighted(&ms, &pools, false).unwrap().chosen, 1);
        assert!(matches!(
            classify_vowel_weighted(&ms, &VowelPools::empty(1, 0.01), false),
            Err(Error::NoVowelEvidence)
        ));
    }

    #[test]
    fn argmax_invariant_under_weight_scaling() {
        let grid = grid_from(&[(Vowel::Aa, vec![0.0, 1.0]), (Vowel::Eh, vec![1.0, 0.0])], 2);
        let mut pools = VowelPools::empty(1, 0.01);
        pools.pools[Vowel::Aa.index()] = frames(0.7, 30, 5);
        pools.pools[Vowel::Eh.index()] = frames(0.4, 30, 6);
        let mut w = vec![0.0; 15];
        w[Vowel::Aa.index()] = 0.3;
        w[Vowel::Eh.index()] = 0.7;
        let ms = AccentModelSet::new(names(2)).unwrap().with_vowel_grid(grid.clone()).unwrap();
        let a = classify_vowel_weighted(&ms.clone().with_vowel_weights(w.clone()).unwrap(), &pools, false).unwrap();
        let scaled: Vec<f64> = w.iter().map(|v| v * 17.0).collect();
        let b = classify_vowel_weighted(&ms.with_vowel_weights(scaled).unwrap(), &pools, false).unwrap();
        assert_eq!(a.chosen, b.chosen);
    }

    #[test]
    fn discriminativeness_modes() {
        let mut grid = grid_from(&[(Vowel::Aa, vec![0.0, 4.0, -4.0]), (Vowel::Ae, vec![1.0, 1.0, 1.0])], 3);
        grid[0][Vowel::Ih.index()] = Some(g(0.0));
        let cfg = HellingerConfig::default();
        let d = vowel_discriminativeness(&grid, Discriminativeness::MeanDistance, &cfg).unwrap();
        assert!(d[Vowel::Aa.index()] > d[Vowel::Ae.index()]);
        assert!(d[Vowel::Ae.index()].abs() < 1e-12);
        assert_eq!(d[Vowel::Ih.index()], 0.0);
        let r = vowel_discriminativeness(&grid, Discriminativeness::ReciprocalMean, &cfg).unwrap();
        assert!((r[Vowel::Aa.index()] * d[Vowel::Aa.index()] - 1.0).abs() < 1e-12);
        assert_eq!(r[Vowel::Ae.index()], 0.0);
    }

    #[test]
    fn weights_are_normalized_products() {
        let w = vowel_weights(&[1.0 / 15.0; 15], &[0.4; 15]).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 15.0).abs() < 1e-15));
        let r: Vec<f64> = (0..15).map(|i| (i % 4) as f64 / 10.0).collect();
        let d: Vec<f64> = (0..15).map(|i| 1.0 + (i % 3) as f64).collect();
        let w = vowel_weights(&r, &d).unwrap();
        let prod: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
        let s: f64 = prod.iter().sum();
        for (a, b) in w.iter().zip(&prod) {
            assert!((a - b / s).abs() < 1e-15);
        }
        assert_eq!(w[0], 0.0);
        assert!(vowel_weights(&[0.0; 15], &[1.0; 15]).is_err());
    }

    #[test]
    fn evaluate_counts_and_unknown_accent() {
        let ms = baseline_set(&[-5.0, 5.0]);
        let items: Vec<EvalItem> = (0..10)
            .map(|i| EvalItem {
                accent: format!("a{}", i % 2),
                features: frames(if i % 2 == 0 { -5.0 } else { 5.0 }, 20, i),
                segments: vec![],
            })
            .collect();
        let rep = evaluate(&ms, &items, &ScoringOptions::default(), "PLP_MVN_39", 7).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.confusion, vec![5, 0, 0, 5]);
        let mut bad = items.clone();
        bad[0].accent = "zz".into();
        assert!(matches!(
            evaluate(&ms, &bad, &ScoringOptions::default(), "x", 0),
            Err(Error::UnknownAccent(_))
        ));
    }

    #[test]
    fn calibration_tie_picks_lowest() {
        let grid = grid_from(&[(Vowel::Aa, vec![-3.0, 3.0])], 2);
        let mut w = vec![0.0; 15];
        w[0] = 1.0;
        let ms = AccentModelSet::new(names(2)).unwrap().with_vowel_grid(grid).unwrap().with_vowel_weights(w).unwrap();
        let seg = VowelSegment { start: 0, end: 2_000_000, vowel: Vowel::Aa, confidence: Some(-10.0) };
        let dev = vec![EvalItem { accent: "a1".into(), features: frames(3.0, 20, 1), segments: vec![seg] }];
        let c = calibrate_threshold(&ms, &dev, &[-50.0, -20.0], &ScoringOptions::default()).unwrap();
        assert_eq!(c.threshold, -50.0);
        let one = calibrate_threshold(&ms, &dev, &[-5.0], &ScoringOptions::default()).unwrap();
        assert_eq!(one.threshold, -5.0);
        assert!(calibrate_threshold(&ms, &dev, &[], &ScoringOptions::default()).is_err());
    }
}
