//! Audio ingestion, framing and dual-threshold silence removal.
//!
//! A frame is kept as speech when both its short-time energy rate and its
//! spectral centroid exceed thresholds estimated from the utterance's own
//! histograms of those measurements. Short speech runs and short gaps are
//! then cleaned up so the result is a list of contiguous segments.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::median;

pub const SUPPORTED_RATES: [u32; 2] = [8000, 16000];

/// Mono PCM audio scaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate_hz) {
            return Err(Error::UnsupportedAudio {
                property: "sample rate",
                value: sample_rate_hz.to_string(),
            });
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample {bad}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Reads a RIFF/WAVE file holding 16-bit mono PCM at 8 or 16 kHz.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = hound::WavReader::new(std::io::BufReader::new(file))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio {
            property: "encoding",
            value: format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio {
            property: "channel count",
            value: spec.channels.to_string(),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes 16-bit mono PCM; samples are clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &audio.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v)?;
    }
    w.finalize()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    pub frame_len_samples: usize,
    pub hop_samples: usize,
}

impl FramePlan {
    pub fn new(frame_len_samples: usize, hop_samples: usize) -> Result<Self> {
        if frame_len_samples == 0 || hop_samples == 0 {
            return Err(Error::invalid("frame length and hop must be positive"));
        }
        if hop_samples > frame_len_samples {
            return Err(Error::invalid(format!(
                "hop {hop_samples} exceeds frame length {frame_len_samples}"
            )));
        }
        Ok(Self {
            frame_len_samples,
            hop_samples,
        })
    }

    pub fn from_millis(sample_rate_hz: u32, frame_ms: f64, hop_ms: f64) -> Result<Self> {
        let to_samples = |ms: f64| (ms * sample_rate_hz as f64 / 1000.0).round() as usize;
        Self::new(to_samples(frame_ms), to_samples(hop_ms))
    }

    /// Number of whole frames that fit in `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len_samples {
            0
        } else {
            (len - self.frame_len_samples) / self.hop_samples + 1
        }
    }

    pub fn hop_sec(&self, sample_rate_hz: u32) -> f64 {
        self.hop_samples as f64 / sample_rate_hz as f64
    }
}

/// Splits audio into frames starting at multiples of the hop; the trailing
/// partial frame is dropped.
pub fn frame_signal<'a>(audio: &'a AudioBuffer, plan: &FramePlan) -> Result<Vec<&'a [f64]>> {
    let n = plan.num_frames(audio.len());
    if n == 0 {
        return Err(Error::TooShort {
            what: "audio samples for one frame",
            needed: plan.frame_len_samples,
            got: audio.len(),
        });
    }
    Ok((0..n)
        .map(|i| {
            let start = i * plan.hop_samples;
            &audio.samples[start..start + plan.frame_len_samples]
        })
        .collect())
}

/// Mean squared amplitude of a frame.
pub fn energy_rate(frame: &[f64]) -> Result<f64> {
    if frame.is_empty() {
        return Err(Error::Empty("frame"));
    }
    Ok(frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64)
}

/// Centroid of a one-sided magnitude spectrum whose first entry is bin 1
/// (DC already removed). Bin k is weighted by k + 1. Returns 0 when the
/// spectrum has no energy.
pub fn centroid_from_magnitudes(mags: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (j, &m) in mags.iter().enumerate() {
        let k = (j + 1) as f64;
        num += (k + 1.0) * m;
        den += m;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Spectral centroid of a frame. `silent` marks an all-zero spectrum, in
/// which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub value: f64,
    pub silent: bool,
}

/// Reusable FFT state for centroid computation over frames of one length.
///
/// Frames are Hann-windowed and zero-padded to the next power of two.
pub struct CentroidAnalyzer {
    frame_len: usize,
    nfft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl CentroidAnalyzer {
    pub fn new(frame_len: usize) -> Result<Self> {
        if frame_len == 0 {
            return Err(Error::Empty("frame"));
        }
        let nfft = frame_len.next_power_of_two().max(2);
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self {
            frame_len,
            nfft,
            window: hann(frame_len),
            fft,
        })
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    /// Magnitudes of bins 1..=nfft/2.
    pub fn magnitudes(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.frame_len {
            return Err(Error::DimMismatch {
                context: "centroid frame length",
                expected: self.frame_len,
                got: frame.len(),
            });
        }
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.nfft)
            .collect();
        self.fft.process(&mut buf);
        Ok(buf[1..=self.nfft / 2].iter().map(|c| c.norm()).collect())
    }

    pub fn centroid(&self, frame: &[f64]) -> Result<Centroid> {
        let mags = self.magnitudes(frame)?;
        let value = centroid_from_magnitudes(&mags);
        Ok(Centroid {
            value,
            silent: value == 0.0,
        })
    }
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let d = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / d).cos())
        .collect()
}

/// Spectral centroid of a single frame; 0 for an all-zero frame.
pub fn spectral_centroid(frame: &[f64]) -> Result<f64> {
    Ok(CentroidAnalyzer::new(frame.len())?.centroid(frame)?.value)
}

/// Histogram settings for threshold estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramParams {
    pub bins: usize,
    /// Width of the centered moving-average smoother, in bins.
    pub smoothing: usize,
    /// A local maximum counts as a mode only when its prominence reaches
    /// this fraction of the tallest smoothed bin...
    pub min_prominence: f64,
    /// ...and this many Poisson standard deviations of its own height.
    pub min_significance: f64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            bins: 50,
            smoothing: 3,
            min_prominence: 0.2,
            min_significance: 3.0,
        }
    }
}

/// Estimated decision threshold. `modes` holds the (lower, upper) mode
/// positions when the histogram was bimodal; otherwise `value` is the median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub modes: Option<(f64, f64)>,
}

impl Threshold {
    pub fn is_bimodal(&self) -> bool {
        self.modes.is_some()
    }
}

pub fn estimate_thresholds(values: &[f64], weight: f64) -> Result<Threshold> {
    estimate_thresholds_with(values, weight, &HistogramParams::default())
}

/// Histogram-mode threshold: with the first two modes M1 < M2 of the
/// smoothed histogram, T = (weight * M1 + M2) / (weight + 1).
pub fn estimate_thresholds_with(
    values: &[f64],
    weight: f64,
    params: &HistogramParams,
) -> Result<Threshold> {
    if values.len() < 10 {
        return Err(Error::TooShort {
            what: "values for threshold estimation",
            needed: 10,
            got: values.len(),
        });
    }
    if !(weight > 0.0) {
        return Err(Error::invalid(format!("threshold weight must be > 0, got {weight}")));
    }
    if params.bins < 3 || params.smoothing == 0 {
        return Err(Error::invalid("histogram needs >= 3 bins and smoothing >= 1"));
    }
    let fallback = Threshold {
        value: median(values),
        modes: None,
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(fallback);
    }
    let bins = params.bins;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let smoothed = moving_average(&counts, params.smoothing);
    let peaks = prominent_peaks(&smoothed, params);
    if peaks.len() < 2 {
        return Ok(fallback);
    }
    let mut top: Vec<usize> = peaks;
    top.sort_by(|&a, &b| smoothed[b].total_cmp(&smoothed[a]).then(a.cmp(&b)));
    let (a, b) = (top[0].min(top[1]), top[0].max(top[1]));
    let center = |i: usize| lo + (i as f64 + 0.5) * width;
    let (m1, m2) = (center(a), center(b));
    Ok(Threshold {
        value: (weight * m1 + m2) / (weight + 1.0),
        modes: Some((m1, m2)),
    })
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + width - half).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Positions of local maxima (plateau midpoints) whose topographic
/// prominence clears both the relative and the counting-noise bar.
fn prominent_peaks(s: &[f64], params: &HistogramParams) -> Vec<usize> {
    let n = s.len();
    let global = s.iter().copied().fold(0.0, f64::max);
    if global <= 0.0 {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let rises = i == 0 || s[i - 1] < s[i];
        let falls = j == n - 1 || s[j + 1] < s[i];
        if rises && falls && s[i] > 0.0 {
            let h = s[i];
            let mut left_min = h;
            for k in (0..i).rev() {
                if s[k] > h {
                    break;
                }
                left_min = left_min.min(s[k]);
            }
            let mut right_min = h;
            for &v in &s[j + 1..] {
                if v > h {
                    break;
                }
                right_min = right_min.min(v);
            }
            // An edge with nothing lower counts as a base of zero.
            let left_base = if i == 0 { 0.0 } else { left_min };
            let right_base = if j == n - 1 { 0.0 } else { right_min };
            let prominence = h - left_base.max(right_base);
            let noise = (h / params.smoothing as f64).sqrt();
            if prominence >= params.min_prominence * global
                && prominence >= params.min_significance * noise
            {
                peaks.push((i + j) / 2);
            }
        }
        i = j + 1;
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadParams {
    pub energy_weight: f64,
    pub centroid_weight: f64,
    pub min_segment_frames: usize,
    pub histogram: HistogramParams,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            energy_weight: 5.0,
            centroid_weight: 2.0,
            min_segment_frames: 5,
            histogram: HistogramParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadResult {
    pub frame_energy: Vec<f64>,
    pub frame_centroid: Vec<f64>,
    pub speech_mask: Vec<bool>,
    /// Half-open frame ranges covering exactly the true entries of `speech_mask`.
    pub segments: Vec<(usize, usize)>,
    pub energy_threshold: Threshold,
    pub centroid_threshold: Threshold,
}

impl VadResult {
    pub fn num_frames(&self) -> usize {
        self.speech_mask.len()
    }

    pub fn speech_frames(&self) -> usize {
        self.speech_mask.iter().filter(|&&m| m).count()
    }

    /// Retained duration over total duration, measured in frames.
    pub fn compression_ratio(&self) -> f64 {
        if self.speech_mask.is_empty() {
            return 0.0;
        }
        self.speech_frames() as f64 / self.num_frames() as f64
    }

    pub fn speech_frame_indices(&self) -> Vec<usize> {
        self.speech_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// One `<start_sec>\t<end_sec>` line per segment.
    pub fn format_segments(&self, hop_sec: f64) -> String {
        let mut out = String::new();
        for &(s, e) in &self.segments {
            out.push_str(&format!("{:.3}\t{:.3}\n", s as f64 * hop_sec, e as f64 * hop_sec));
        }
        out
    }
}

/// Half-open runs of `true` in a mask.
pub fn mask_to_segments(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut segs = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                segs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segs.push((s, mask.len()));
    }
    segs
}

pub fn segments_to_mask(segments: &[(usize, usize)], len: usize) -> Vec<bool> {
    let mut mask = vec![false; len];
    for &(s, e) in segments {
        mask[s..e].iter_mut().for_each(|m| *m = true);
    }
    mask
}

/// Bridges interior gaps shorter than `min_len`, then drops runs shorter
/// than `min_len`.
fn clean_mask(mask: &mut [bool], min_len: usize) {
    if min_len <= 1 {
        return;
    }
    let segs = mask_to_segments(mask);
    for w in segs.windows(2) {
        let (gap_start, gap_end) = (w[0].1, w[1].0);
        if gap_end - gap_start < min_len {
            mask[gap_start..gap_end].iter_mut().for_each(|m| *m = true);
        }
    }
    for (s, e) in mask_to_segments(mask) {
        if e - s < min_len {
            mask[s..e].iter_mut().for_each(|m| *m = false);
        }
    }
}

/// Frame-level silence removal.
///
/// A measurement whose histogram shows no second mode carries no
/// speech/silence contrast and does not veto any frame; all-zero frames are
/// always silence.
pub fn remove_silence(audio: &AudioBuffer, plan: &FramePlan, params: &VadParams) -> Result<VadResult> {
    let frames = frame_signal(audio, plan)?;
    let analyzer = CentroidAnalyzer::new(plan.frame_len_samples)?;
    let mut frame_energy = Vec::with_capacity(frames.len());
    let mut frame_centroid = Vec::with_capacity(frames.len());
    let mut silent = Vec::with_capacity(frames.len());
    for f in &frames {
        frame_energy.push(energy_rate(f)?);
        let c = analyzer.centroid(f)?;
        frame_centroid.push(c.value);
        silent.push(c.silent);
    }

    let (energy_threshold, centroid_threshold) = if frames.len() >= 10 {
        (
            estimate_thresholds_with(&frame_energy, params.energy_weight, &params.histogram)?,
            estimate_thresholds_with(&frame_centroid, params.centroid_weight, &params.histogram)?,
        )
    } else {
        let pass = Threshold {
            value: f64::NEG_INFINITY,
            modes: None,
        };
        (pass, pass)
    };
    let passes = |v: f64, t: &Threshold| !t.is_bimodal() || v > t.value;

    let mut speech_mask: Vec<bool> = (0..frames.len())
        .map(|i| {
            !silent[i]
                && passes(frame_energy[i], &energy_threshold)
                && passes(frame_centroid[i], &centroid_threshold)
        })
        .collect();
    clean_mask(&mut speech_mask, params.min_segment_frames);
    let segments = mask_to_segments(&speech_mask);

    Ok(VadResult {
        frame_energy,
        frame_centroid,
        speech_mask,
        segments,
        energy_threshold,
        centroid_threshold,
    })
}

/// Concatenates the samples of the speech segments.
pub fn trim_to_speech(audio: &AudioBuffer, plan: &FramePlan, vad: &VadResult) -> Result<AudioBuffer> {
    let mut out = Vec::new();
    for &(s, e) in &vad.segments {
        let a = s * plan.hop_samples;
        let b = (e * plan.hop_samples).min(audio.len());
        out.extend_from_slice(&audio.samples[a..b]);
    }
    AudioBuffer::new(out, audio.sample_rate_hz)
}
