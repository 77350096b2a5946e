//! Synthetic corpora: feature-level utterances drawn from per-accent,
//! per-phone Gaussian mixtures, and tone/silence audio for the front end.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::signal::{write_wav, AudioBuffer, FramePlan};
use crate::vowels::{LabelEntry, LabelFile, Vowel, NUM_VOWELS, TICKS_PER_SEC};

const CONSONANTS: [&str; 20] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "th", "hh", "ng", "w", "y",
];

/// Frequencies skewed towards `ah`, with `oy` rarest.
pub const DEFAULT_POPULARITY: [f64; NUM_VOWELS] = [
    0.06, 0.07, 0.21, 0.05, 0.02, 0.05, 0.08, 0.06, 0.05, 0.14, 0.09, 0.04, 0.005, 0.015, 0.06,
];

/// How an accent changes the phones that carry it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccentStyle {
    /// Moves the phone's mixture by `separation` in a random direction.
    Shift,
    /// Realizes the phone with the distribution of a consonant class, a
    /// different one per accent.
    Substitute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_accents: usize,
    /// Accent labels; empty gives `acc1`, `acc2`, ...
    pub accent_names: Vec<String>,
    pub dim: usize,
    pub utterances_per_accent: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    /// Probability that a segment is a vowel.
    pub vowel_fraction: f64,
    pub popularity: Vec<f64>,
    /// Spread of phone class centers, in units of the within-class deviation.
    pub class_spread: f64,
    pub components: usize,
    pub component_spread: f64,
    pub consonant_classes: usize,
    /// Vowels that carry the accent. Empty means every phone does.
    pub accent_vowels: Vec<Vowel>,
    pub style: AccentStyle,
    pub separation: f64,
    /// Probability that a vowel segment is drawn from a decoy accent and
    /// scored as noise.
    pub noise_fraction: f64,
    pub genuine_score: f64,
    pub noise_score: f64,
    pub score_sd: f64,
    /// Write a confidence column in the label files.
    pub scores: bool,
    /// Per-utterance offset deviation.
    pub speaker_sd: f64,
    pub frame_hop_sec: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_accents: 7,
            accent_names: Vec::new(),
            dim: 39,
            utterances_per_accent: 100,
            min_frames: 200,
            max_frames: 400,
            min_segment_frames: 4,
            max_segment_frames: 12,
            vowel_fraction: 0.6,
            popularity: DEFAULT_POPULARITY.to_vec(),
            class_spread: 3.0,
            components: 2,
            component_spread: 0.5,
            consonant_classes: 12,
            accent_vowels: Vec::new(),
            style: AccentStyle::Shift,
            separation: 3.0,
            noise_fraction: 0.0,
            genuine_score: -40.0,
            noise_score: -80.0,
            score_sd: 5.0,
            scores: true,
            speaker_sd: 0.0,
            frame_hop_sec: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn accent_labels(&self) -> Vec<String> {
        if self.accent_names.is_empty() {
            (1..=self.num_accents).map(|i| format!("acc{i}")).collect()
        } else {
            self.accent_names.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("synthetic spec: {m}")));
        if self.num_accents == 0 || self.dim == 0 || self.utterances_per_accent == 0 {
            return bad("num_accents, dim and utterances_per_accent must be positive".into());
        }
        if !self.accent_names.is_empty() && self.accent_names.len() != self.num_accents {
            return bad(format!("{} accent names for {} accents", self.accent_names.len(), self.num_accents));
        }
        let mut names = self.accent_labels();
        names.sort();
        names.dedup();
        if names.len() != self.num_accents || names.iter().any(|n| n.is_empty() || n.contains(char::is_whitespace)) {
            return bad("accent names must be distinct non-empty words".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("need 0 < min_frames <= max_frames".into());
        }
        if self.min_segment_frames == 0 || self.min_segment_frames > self.max_segment_frames {
            return bad("need 0 < min_segment_frames <= max_segment_frames".into());
        }
        if self.popularity.len() != NUM_VOWELS
            || self.popularity.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (self.popularity.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("popularity must be {NUM_VOWELS} non-negative values summing to 1"));
        }
        if self.components == 0 || !(1..=CONSONANTS.len()).contains(&self.consonant_classes) {
            return bad(format!("need components >= 1 and 1..={} consonant classes", CONSONANTS.len()));
        }
        if self.style == AccentStyle::Substitute && self.consonant_classes < self.num_accents {
            return bad("substitution needs at least one consonant class per accent".into());
        }
        for (name, v) in [
            ("vowel_fraction", self.vowel_fraction),
            ("noise_fraction", self.noise_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        for (name, v) in [
            ("class_spread", self.class_spread),
            ("component_spread", self.component_spread),
            ("separation", self.separation),
            ("score_sd", self.score_sd),
            ("speaker_sd", self.speaker_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.frame_hop_sec > 0.0) || !self.genuine_score.is_finite() || !self.noise_score.is_finite() {
            return bad("frame_hop_sec must be positive and scores finite".into());
        }
        Ok(())
    }
}

/// Equal-weight isotropic mixture with unit within-component deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
}

impl PhoneMixture {
    fn sample(&self, rng: &mut ChaCha8Rng, offset: &[f64], out: &mut Vec<f64>) {
        let i = rng.random_range(0..self.means.len());
        for (m, o) in self.means[i].iter().zip(offset) {
            let z: f64 = rng.sample(StandardNormal);
            out.push(m + o + z);
        }
    }
}

/// Ground truth of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub spec: SyntheticSpec,
    pub accents: Vec<String>,
    /// `[accent][vowel]`
    pub vowels: Vec<Vec<PhoneMixture>>,
    /// `[accent][consonant class]`
    pub consonants: Vec<Vec<PhoneMixture>>,
}

impl GeneratorParams {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.dim;
        let spread = Normal::new(0.0, spec.class_spread.max(f64::MIN_POSITIVE)).expect("finite");
        let center = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| spread.sample(rng)).collect() };
        let vowel_centers: Vec<Vec<f64>> = (0..NUM_VOWELS).map(|_| center(&mut rng)).collect();
        let cons_centers: Vec<Vec<f64>> = (0..spec.consonant_classes).map(|_| center(&mut rng)).collect();
        let comp_offsets: Vec<Vec<Vec<f64>>> = (0..NUM_VOWELS + spec.consonant_classes)
            .map(|_| {
                (0..spec.components)
                    .map(|_| (0..d).map(|_| spec.component_spread * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect()
            })
            .collect();

        let carries = |t: Option<Vowel>| match t {
            Some(v) => spec.accent_vowels.is_empty() || spec.accent_vowels.contains(&v),
            None => spec.accent_vowels.is_empty(),
        };
        let mixture = |center: &[f64], offsets: &[Vec<f64>], shift: &[f64]| PhoneMixture {
            weights: vec![1.0 / offsets.len() as f64; offsets.len()],
            means: offsets
                .iter()
                .map(|o| center.iter().zip(o).zip(shift).map(|((c, o), s)| c + o + s).collect())
                .collect(),
        };
        let direction = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| spec.separation * x / n).collect()
        };
        // One consonant class per accent for each substituted vowel.
        let substitutes: Vec<Vec<usize>> = (0..NUM_VOWELS)
            .map(|_| {
                let mut c: Vec<usize> = (0..spec.consonant_classes).collect();
                c.shuffle(&mut rng);
                c
            })
            .collect();
        let zero = vec![0.0; d];

        let mut vowels = Vec::with_capacity(spec.num_accents);
        let mut consonants = Vec::with_capacity(spec.num_accents);
        for s in 0..spec.num_accents {
            let mut vs = Vec::with_capacity(NUM_VOWELS);
            for (t, v) in Vowel::ALL.iter().enumerate() {
                let m = if !carries(Some(*v)) {
                    mixture(&vowel_centers[t], &comp_offsets[t], &zero)
                } else {
                    match spec.style {
                        AccentStyle::Shift => mixture(&vowel_centers[t], &comp_offsets[t], &direction(&mut rng)),
                        AccentStyle::Substitute => {
                            let c = substitutes[t][s];
                            mixture(&cons_centers[c], &comp_offsets[NUM_VOWELS + c], &zero)
                        }
                    }
                };
                vs.push(m);
            }
            let cs = (0..spec.consonant_classes)
                .map(|c| {
                    let shift = if carries(None) && spec.style == AccentStyle::Shift {
                        direction(&mut rng)
                    } else {
                        zero.clone()
                    };
                    mixture(&cons_centers[c], &comp_offsets[NUM_VOWELS + c], &shift)
                })
                .collect();
            vowels.push(vs);
            consonants.push(cs);
        }
        Ok(Self {
            spec: spec.clone(),
            accents: spec.accent_labels(),
            vowels,
            consonants,
        })
    }

    fn hop_ticks(&self) -> u64 {
        (self.spec.frame_hop_sec * TICKS_PER_SEC as f64).round() as u64
    }

    /// Utterance `u` of accent `s`; each has its own random stream.
    pub fn utterance(&self, s: usize, u: usize) -> Result<SynthUtterance> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_0F_5A_17);
        rng.set_stream((s * spec.utterances_per_accent + u) as u64);
        let n = rng.random_range(spec.min_frames..=spec.max_frames);
        let speaker: Vec<f64> = (0..spec.dim).map(|_| spec.speaker_sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let decoy = if spec.num_accents > 1 {
            (s + rng.random_range(1..spec.num_accents)) % spec.num_accents
        } else {
            s
        };
        let cumulative: Vec<f64> = spec
            .popularity
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let hop = self.hop_ticks();
        let mut data = Vec::with_capacity(n * spec.dim);
        let mut entries = Vec::new();
        let mut k = 0;
        while k < n {
            let len = rng.random_range(spec.min_segment_frames..=spec.max_segment_frames).min(n - k);
            let (phone, mix, confidence) = if rng.random_bool(spec.vowel_fraction) {
                let u: f64 = rng.random();
                let t = cumulative.iter().position(|&c| u < c).unwrap_or(NUM_VOWELS - 1);
                let noise = rng.random_bool(spec.noise_fraction);
                let src = if noise { decoy } else { s };
                let mean = if noise { spec.noise_score } else { spec.genuine_score };
                let score = mean + spec.score_sd * rng.sample::<f64, _>(StandardNormal);
                (Vowel::ALL[t].as_str(), &self.vowels[src][t], score)
            } else {
                let c = rng.random_range(0..spec.consonant_classes);
                let score = spec.genuine_score + spec.score_sd * rng.sample::<f64, _>(StandardNormal);
                (CONSONANTS[c], &self.consonants[s][c], score)
            };
            for _ in 0..len {
                mix.sample(&mut rng, &speaker, &mut data);
            }
            entries.push(LabelEntry {
                start: k as u64 * hop,
                end: (k + len) as u64 * hop,
                phone: phone.to_string(),
                confidence: spec.scores.then_some(confidence),
            });
            k += len;
        }
        Ok(SynthUtterance {
            accent: self.accents[s].clone(),
            features: FeatureMatrix::new(data, n, spec.dim, spec.frame_hop_sec)?,
            labels: LabelFile { entries },
        })
    }

    /// All utterances, accent-major.
    pub fn utterances(&self) -> Result<Vec<SynthUtterance>> {
        let n = self.spec.utterances_per_accent;
        (0..self.spec.num_accents * n)
            .into_par_iter()
            .map(|i| self.utterance(i / n, i % n))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub accent: String,
    pub features: FeatureMatrix,
    pub labels: LabelFile,
}

/// Writes `features/*.aff`, `labels/*.lab`, `manifest.tsv` and
/// `generator.json` under `dir` and returns the manifest.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, dir: &Path) -> Result<CorpusManifest> {
    let params = GeneratorParams::new(spec)?;
    for sub in ["features", "labels"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let utts = params.utterances()?;
    let n = spec.utterances_per_accent;
    let rel: Vec<(String, String)> = utts
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let stem = format!("{}_{:05}", u.accent, i % n);
            (format!("features/{stem}.aff"), format!("labels/{stem}.lab"))
        })
        .collect();
    utts.par_iter().zip(&rel).try_for_each(|(u, (f, l))| -> Result<()> {
        u.features.write(dir.join(f))?;
        u.labels.write(dir.join(l))
    })?;
    let mut tsv = String::new();
    for (u, (f, l)) in utts.iter().zip(&rel) {
        tsv.push_str(&format!("{f}\t{l}\t{}\n", u.accent));
    }
    let mpath = dir.join("manifest.tsv");
    std::fs::write(&mpath, &tsv).map_err(|e| Error::io(&mpath, e))?;
    let gpath = dir.join("generator.json");
    let json = serde_json::to_string_pretty(&params).expect("params serialize") + "\n";
    std::fs::write(&gpath, json).map_err(|e| Error::io(&gpath, e))?;
    Ok(CorpusManifest {
        entries: utts
            .iter()
            .zip(&rel)
            .map(|(u, (f, l))| ManifestEntry {
                audio: dir.join(f),
                labels: Some(dir.join(l)),
                accent: u.accent.clone(),
                split: None,
            })
            .collect(),
        seed: None,
    })
}

/// Speech bursts separated by quiet low-passed noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToneSilenceSpec {
    pub sample_rate_hz: u32,
    pub duration_sec: f64,
    pub speech_fraction: f64,
    pub bursts: usize,
    pub amplitude: f64,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for ToneSilenceSpec {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            duration_sec: 4.0,
            speech_fraction: 0.85,
            bursts: 3,
            amplitude: 0.3,
            noise_amplitude: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToneSilence {
    pub audio: AudioBuffer,
    /// Half-open sample ranges of the bursts.
    pub speech: Vec<(usize, usize)>,
}

impl ToneSilence {
    /// A frame is speech when its center sample lies in a burst.
    pub fn frame_truth(&self, plan: &FramePlan) -> Vec<bool> {
        (0..plan.num_frames(self.audio.len()))
            .map(|i| {
                let c = i * plan.hop_samples + plan.frame_len_samples / 2;
                self.speech.iter().any(|&(a, b)| (a..b).contains(&c))
            })
            .collect()
    }

    pub fn speech_samples(&self) -> usize {
        self.speech.iter().map(|(a, b)| b - a).sum()
    }
}

/// Harmonic bursts with a slow amplitude envelope. The silence between them
/// is one-pole low-passed noise, so it has both low energy and a low
/// spectral centroid. Leading and trailing silence are included.
pub fn synth_tone_silence(spec: &ToneSilenceSpec) -> Result<ToneSilence> {
    if spec.bursts == 0 || !(0.0 < spec.speech_fraction && spec.speech_fraction < 1.0) {
        return Err(Error::invalid("need bursts >= 1 and speech_fraction in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sr = spec.sample_rate_hz as f64;
    let n = (spec.duration_sec * sr).round() as usize;
    let speech_total = (spec.speech_fraction * n as f64).round() as usize;
    let silence_total = n - speech_total;
    let split = |rng: &mut ChaCha8Rng, total: usize, parts: usize| -> Vec<usize> {
        let w: Vec<f64> = (0..parts).map(|_| rng.random_range(0.75..1.25)).collect();
        let sum: f64 = w.iter().sum();
        let mut out: Vec<usize> = w.iter().map(|x| (x / sum * total as f64).floor() as usize).collect();
        let short = total - out.iter().sum::<usize>();
        out[0] += short;
        out
    };
    let gaps = split(&mut rng, silence_total, spec.bursts + 1);
    let bursts = split(&mut rng, speech_total, spec.bursts);

    let mut samples = Vec::with_capacity(n);
    let mut speech = Vec::with_capacity(spec.bursts);
    let (mut lp1, mut lp2) = (0.0, 0.0);
    let mut quiet = |rng: &mut ChaCha8Rng, len: usize, out: &mut Vec<f64>| {
        for _ in 0..len {
            let w: f64 = rng.random_range(-1.0..1.0);
            lp1 = 0.98 * lp1 + 0.02 * w;
            lp2 = 0.98 * lp2 + 0.02 * lp1;
            out.push(spec.noise_amplitude * 100.0 * lp2);
        }
    };
    quiet(&mut rng, gaps[0], &mut samples);
    for (b, &len) in bursts.iter().enumerate() {
        let start = samples.len();
        let f0 = rng.random_range(100.0..250.0);
        let harmonics = ((3500.0 / f0) as usize).max(1);
        let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let rate = rng.random_range(3.0..6.0);
        for i in 0..len {
            let t = i as f64 / sr;
            let env = 0.85 + 0.15 * (std::f64::consts::TAU * rate * t).sin();
            let v: f64 = (0..harmonics)
                .map(|h| (std::f64::consts::TAU * f0 * (h + 1) as f64 * t + phases[h]).sin())
                .sum::<f64>()
                / (harmonics as f64).sqrt();
            let hiss: f64 = rng.random_range(-0.05..0.05);
            samples.push(spec.amplitude * (env * v + hiss));
        }
        speech.push((start, samples.len()));
        quiet(&mut rng, gaps[b + 1], &mut samples);
    }
    Ok(ToneSilence {
        audio: AudioBuffer::new(samples, spec.sample_rate_hz)?,
        speech,
    })
}

/// Tone/silence wav files with a manifest (no label files).
pub fn generate_audio_corpus(
    accents: &[String],
    utterances_per_accent: usize,
    spec: &ToneSilenceSpec,
    dir: &Path,
) -> Result<CorpusManifest> {
    let wav_dir = dir.join("audio");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut entries = Vec::new();
    let mut tsv = String::new();
    for (a, accent) in accents.iter().enumerate() {
        for u in 0..utterances_per_accent {
            let s = ToneSilenceSpec {
                seed: spec.seed ^ ((a * utterances_per_accent + u) as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..spec.clone()
            };
            let rel = format!("audio/{accent}_{u:05}.wav");
            write_wav(dir.join(&rel), &synth_tone_silence(&s)?.audio)?;
            tsv.push_str(&format!("{rel}\t-\t{accent}\n"));
            entries.push(ManifestEntry {
                audio: dir.join(&rel),
                labels: None,
                accent: accent.clone(),
                split: None,
            });
        }
    }
    let mpath = dir.join("manifest.tsv");
    std::fs::write(&mpath, tsv).map_err(|e| Error::io(&mpath, e))?;
    Ok(CorpusManifest { entries, seed: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{remove_silence, VadParams};
    use crate::vowels::{pool_vowel_features, vowel_popularity};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            num_accents: 3,
            dim: 4,
            utterances_per_accent: 5,
            min_frames: 50,
            max_frames: 80,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn default_popularity_is_a_distribution() {
        let s: f64 = DEFAULT_POPULARITY.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(SyntheticSpec::default().validate().is_ok());
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        for spec in [
            SyntheticSpec { popularity: vec![1.0 / 14.0; 14], ..small() },
            SyntheticSpec { popularity: vec![0.1; 15], ..small() },
            SyntheticSpec { components: 0, ..small() },
            SyntheticSpec { noise_fraction: 1.5, ..small() },
            SyntheticSpec { separation: f64::NAN, ..small() },
            SyntheticSpec { style: AccentStyle::Substitute, consonant_classes: 2, ..small() },
        ] {
            assert!(GeneratorParams::new(&spec).is_err());
        }
    }

    #[test]
    fn utterances_are_deterministic_and_labeled() {
        let p = GeneratorParams::new(&small()).unwrap();
        let a = p.utterance(1, 2).unwrap();
        let b = p.utterance(1, 2).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert!((50..=80).contains(&a.features.rows()));
        let hop = p.hop_ticks();
        assert_eq!(a.labels.entries.last().unwrap().end, a.features.rows() as u64 * hop);
        for w in a.labels.entries.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        let c = p.utterance(1, 3).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn identical_generators_without_separation() {
        let p = GeneratorParams::new(&SyntheticSpec { separation: 0.0, ..small() }).unwrap();
        assert_eq!(p.vowels[0], p.vowels[2]);
        assert_eq!(p.consonants[0], p.consonants[1]);
    }

    #[test]
    fn only_listed_vowels_carry_the_accent() {
        let spec = SyntheticSpec {
            accent_vowels: vec![Vowel::Ah, Vowel::Iy],
            ..small()
        };
        let p = GeneratorParams::new(&spec).unwrap();
        for v in Vowel::ALL {
            let same = p.vowels[0][v.index()] == p.vowels[1][v.index()];
            assert_eq!(same, !spec.accent_vowels.contains(&v), "{v}");
        }
        assert_eq!(p.consonants[0], p.consonants[1]);
        let sub = GeneratorParams::new(&SyntheticSpec {
            style: AccentStyle::Substitute,
            ..spec
        })
        .unwrap();
        assert_ne!(sub.vowels[0][Vowel::Ah.index()], sub.vowels[1][Vowel::Ah.index()]);
        assert!(sub.consonants[0].contains(&sub.vowels[0][Vowel::Ah.index()]));
    }

    #[test]
    fn popularity_is_recovered() {
        let spec = SyntheticSpec {
            num_accents: 1,
            dim: 2,
            utterances_per_accent: 200,
            min_frames: 300,
            max_frames: 300,
            ..SyntheticSpec::default()
        };
        let p = GeneratorParams::new(&spec).unwrap();
        let mut counts = [0usize; NUM_VOWELS];
        for u in p.utterances().unwrap() {
            let pools = pool_vowel_features(&u.features, &u.labels.vowel_segments()).unwrap();
            for (c, k) in counts.iter_mut().zip(pools.frame_counts()) {
                *c += k;
            }
        }
        let r = vowel_popularity(&counts).unwrap();
        for t in 0..NUM_VOWELS {
            assert!((r[t] - DEFAULT_POPULARITY[t]).abs() < 0.02, "{t}: {} vs {}", r[t], DEFAULT_POPULARITY[t]);
        }
        assert!(r[Vowel::Ah.index()] > r[Vowel::Oy.index()]);
    }

    #[test]
    fn noise_segments_carry_low_scores() {
        let p = GeneratorParams::new(&SyntheticSpec { noise_fraction: 0.5, ..small() }).unwrap();
        let scores: Vec<f64> = p
            .utterances()
            .unwrap()
            .iter()
            .flat_map(|u| u.labels.vowel_segments())
            .map(|s| s.confidence.unwrap())
            .collect();
        let low = scores.iter().filter(|&&c| c < -60.0).count();
        assert!(low > scores.len() / 4 && low < 3 * scores.len() / 4);
    }

    #[test]
    fn corpus_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(&small(), dir.path()).unwrap();
        assert_eq!(m.entries.len(), 15);
        let back = CorpusManifest::read(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(back, m);
        let f = FeatureMatrix::read(&m.entries[0].audio).unwrap();
        assert_eq!(f.cols(), 4);
        let g: GeneratorParams =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("generator.json")).unwrap()).unwrap();
        assert_eq!(g.accents, vec!["acc1", "acc2", "acc3"]);
    }

    #[test]
    fn vad_recovers_tone_bursts() {
        for seed in 0..5 {
            let ts = synth_tone_silence(&ToneSilenceSpec { seed, ..ToneSilenceSpec::default() }).unwrap();
            let plan = FramePlan::from_millis(16_000, 25.0, 10.0).unwrap();
            let r = remove_silence(&ts.audio, &plan, &VadParams::default()).unwrap();
            let truth = ts.frame_truth(&plan);
            let agree = truth.iter().zip(&r.speech_mask).filter(|(a, b)| a == b).count();
            assert!(agree as f64 / truth.len() as f64 >= 0.9, "seed {seed}");
            let expected = crate::signal::mask_to_segments(&truth);
            assert_eq!(r.segments.len(), expected.len(), "seed {seed}");
            for (got, want) in r.segments.iter().zip(&expected) {
                assert!(got.0.abs_diff(want.0) <= 2 && got.1.abs_diff(want.1) <= 2, "{got:?} vs {want:?}");
            }
            assert!((r.compression_ratio() - 0.85).abs() <= 0.03, "{}", r.compression_ratio());
        }
    }
}
