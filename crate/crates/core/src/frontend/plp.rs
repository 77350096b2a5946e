//! Perceptual linear prediction cepstra.
//!
//! Per frame: Hamming window, power spectrum, Bark-spaced critical-band
//! integration, equal-loudness pre-emphasis, intensity-loudness power law,
//! inverse DFT to an autocorrelation, Levinson-Durbin, LP-to-cepstrum.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureMatrix, FrontendConfig};
use crate::error::{Error, Result};

/// Added to critical-band energies so an all-zero frame stays finite.
const BAND_FLOOR: f64 = 1e-20;

fn hz_to_bark(f: f64) -> f64 {
    6.0 * (f / 600.0).asinh()
}

/// Hermansky's critical-band masking curve as a function of the Bark offset
/// from the band center.
fn critical_band_weight(dz: f64) -> f64 {
    if dz < -1.3 || dz > 2.5 {
        0.0
    } else if dz <= -0.5 {
        10f64.powf(2.5 * (dz + 0.5))
    } else if dz < 0.5 {
        1.0
    } else {
        10f64.powf(-(dz - 0.5))
    }
}

fn equal_loudness(f: f64) -> f64 {
    let w2 = (2.0 * PI * f).powi(2);
    (w2 + 56.8e6) * w2 * w2 / ((w2 + 6.3e6).powi(2) * (w2 + 0.38e9))
}

/// Levinson-Durbin recursion for `A(z) = 1 + sum_k a_k z^-k`.
///
/// Returns `(a_1..a_p, prediction error)`.
pub fn levinson_durbin(autocorr: &[f64], order: usize) -> Result<(Vec<f64>, f64)> {
    if autocorr.len() < order + 1 {
        return Err(Error::TooShort {
            what: "autocorrelation lags",
            needed: order + 1,
            got: autocorr.len(),
        });
    }
    let mut err = autocorr[0];
    if !(err > 0.0) {
        return Err(Error::invalid("autocorrelation at lag 0 must be positive"));
    }
    let mut a = vec![0.0; order + 1];
    let mut prev = vec![0.0; order + 1];
    for i in 1..=order {
        let acc = autocorr[i] + (1..i).map(|j| a[j] * autocorr[i - j]).sum::<f64>();
        let k = -acc / err;
        prev[..i].copy_from_slice(&a[..i]);
        a[i] = k;
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            // Perfectly predictable: keep what we have.
            err = f64::MIN_POSITIVE;
            break;
        }
    }
    Ok((a[1..].to_vec(), err))
}

/// Cepstrum of the all-pole model `gain / A(z)` with `gain^2 = err`;
/// c0 = ln(err).
pub fn lpc_to_cepstrum(a: &[f64], err: f64, num_ceps: usize) -> Vec<f64> {
    let p = a.len();
    let coef = |n: usize| if n >= 1 && n <= p { a[n - 1] } else { 0.0 };
    let mut c = vec![0.0; num_ceps];
    if num_ceps == 0 {
        return c;
    }
    c[0] = err.ln();
    for n in 1..num_ceps {
        let mut v = -coef(n);
        for k in 1..n {
            v -= (k as f64 / n as f64) * c[k] * coef(n - k);
        }
        c[n] = v;
    }
    c
}

/// Precomputed window, FFT plan and filterbank for one frame length and rate.
pub struct PlpAnalyzer {
    cfg: FrontendConfig,
    frame_len: usize,
    nfft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    /// num_filters rows over nfft/2 + 1 bins, loudness weight folded in.
    filters: Vec<Vec<f64>>,
}

impl PlpAnalyzer {
    pub fn new(cfg: &FrontendConfig, sample_rate_hz: u32, frame_len: usize) -> Result<Self> {
        cfg.validate()?;
        if frame_len < 2 {
            return Err(Error::invalid("PLP frame length must be at least 2"));
        }
        let nfft = frame_len.next_power_of_two();
        let nbins = nfft / 2 + 1;
        let nyq = sample_rate_hz as f64 / 2.0;
        let nyq_bark = hz_to_bark(nyq);
        let nf = cfg.num_filters;
        let bin_bark: Vec<f64> = (0..nbins)
            .map(|j| hz_to_bark(j as f64 * sample_rate_hz as f64 / nfft as f64))
            .collect();
        let filters = (0..nf)
            .map(|i| {
                let zc = (i + 1) as f64 * nyq_bark / (nf + 1) as f64;
                let fc = 600.0 * (zc / 6.0).sinh();
                let el = equal_loudness(fc);
                bin_bark
                    .iter()
                    .map(|&z| el * critical_band_weight(z - zc))
                    .collect()
            })
            .collect();
        let window = (0..frame_len)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            frame_len,
            nfft,
            window,
            fft: FftPlanner::new().plan_fft_forward(nfft),
            filters,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    /// Auditory spectrum after loudness weighting and compression, with the
    /// edge bands duplicated to stand in for DC and Nyquist.
    fn auditory_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.nfft)
            .collect();
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..self.nfft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let mut bands: Vec<f64> = self
            .filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                (e + BAND_FLOOR).powf(self.cfg.compression_exponent)
            })
            .collect();
        let first = bands[0];
        let last = *bands.last().unwrap();
        bands.insert(0, first);
        bands.push(last);
        bands
    }

    /// Autocorrelation of the auditory spectrum, read as samples of a power
    /// spectrum over [0, pi].
    fn autocorrelation(spec: &[f64], lags: usize) -> Vec<f64> {
        let l = spec.len();
        let denom = (l - 1) as f64;
        (0..=lags)
            .map(|m| {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let mut r = spec[0] + sign * spec[l - 1];
                for (j, &p) in spec.iter().enumerate().take(l - 1).skip(1) {
                    r += 2.0 * p * (PI * (m * j) as f64 / denom).cos();
                }
                r / (2.0 * denom)
            })
            .collect()
    }

    pub fn cepstra(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.frame_len {
            return Err(Error::DimMismatch {
                context: "PLP frame length",
                expected: self.frame_len,
                got: frame.len(),
            });
        }
        let spec = self.auditory_spectrum(frame);
        let r = Self::autocorrelation(&spec, self.cfg.lp_order);
        let (a, err) = levinson_durbin(&r, self.cfg.lp_order)?;
        Ok(lpc_to_cepstrum(&a, err, self.cfg.num_ceps))
    }

    /// Static cepstra for a sequence of frames (K x num_ceps).
    pub fn process(&self, frames: &[&[f64]], frame_hop_sec: f64) -> Result<FeatureMatrix> {
        if frames.is_empty() {
            return Err(Error::Empty("speech frames"));
        }
        let mut data = Vec::with_capacity(frames.len() * self.cfg.num_ceps);
        for f in frames {
            data.extend(self.cepstra(f)?);
        }
        FeatureMatrix::new(data, frames.len(), self.cfg.num_ceps, frame_hop_sec)
    }
}

/// Static PLP cepstra c0..c(num_ceps-1) for each frame.
pub fn plp_static(
    frames: &[&[f64]],
    sample_rate_hz: u32,
    frame_hop_sec: f64,
    cfg: &FrontendConfig,
) -> Result<FeatureMatrix> {
    let first = frames.first().ok_or(Error::Empty("speech frames"))?;
    PlpAnalyzer::new(cfg, sample_rate_hz, first.len())?.process(frames, frame_hop_sec)
}
