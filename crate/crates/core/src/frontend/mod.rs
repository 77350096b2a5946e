//! Speech frames to normalized 39-dimensional cepstral features.

mod matrix;
mod normalize;
mod plp;

pub use matrix::{FeatureMatrix, FEATURE_MAGIC};
pub use normalize::{append_deltas, deltas, feature_warp, mvn, MvnStats, MVN_VARIANCE_FLOOR};
pub use plp::{levinson_durbin, lpc_to_cepstrum, plp_static, PlpAnalyzer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{frame_signal, remove_silence, AudioBuffer, FramePlan, VadParams, VadResult};

/// Order of the two normalization steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    MvnThenWarp,
    WarpThenMvn,
    MvnOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub lp_order: usize,
    /// Static cepstra including c0.
    pub num_ceps: usize,
    pub num_filters: usize,
    pub delta_window: usize,
    pub warp_window_frames: usize,
    pub compression_exponent: f64,
    pub normalization: Normalization,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            lp_order: 12,
            num_ceps: 13,
            num_filters: 21,
            delta_window: 2,
            warp_window_frames: 301,
            compression_exponent: 0.33,
            normalization: Normalization::MvnThenWarp,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lp_order == 0 || self.num_ceps == 0 || self.num_filters < 2 {
            return Err(Error::Config("lp_order, num_ceps must be > 0 and num_filters >= 2".into()));
        }
        if self.num_ceps > self.lp_order + 1 {
            return Err(Error::Config(format!(
                "num_ceps {} exceeds lp_order + 1 = {}",
                self.num_ceps,
                self.lp_order + 1
            )));
        }
        if self.warp_window_frames < 3 || self.warp_window_frames % 2 == 0 {
            return Err(Error::Config(format!(
                "warp_window_frames must be odd and >= 3, got {}",
                self.warp_window_frames
            )));
        }
        if self.delta_window == 0 {
            return Err(Error::Config("delta_window must be positive".into()));
        }
        if !(self.compression_exponent > 0.0) {
            return Err(Error::Config("compression_exponent must be positive".into()));
        }
        Ok(())
    }

    /// Static + delta + delta-delta.
    pub fn output_dim(&self) -> usize {
        3 * self.num_ceps
    }
}

/// Features of one utterance with the silence-removal result that selected
/// its frames.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub features: FeatureMatrix,
    pub vad: VadResult,
}

/// Static + dynamic features, then per-utterance normalization.
pub fn normalize_features(statics: &FeatureMatrix, cfg: &FrontendConfig) -> Result<FeatureMatrix> {
    let full = append_deltas(statics, cfg.delta_window)?;
    Ok(match cfg.normalization {
        Normalization::MvnThenWarp => feature_warp(&mvn(&full)?.0, cfg.warp_window_frames)?,
        Normalization::WarpThenMvn => mvn(&feature_warp(&full, cfg.warp_window_frames)?)?.0,
        Normalization::MvnOnly => mvn(&full)?.0,
    })
}

/// Full front end: silence removal, PLP on speech frames, deltas, normalization.
pub fn extract_features(
    audio: &AudioBuffer,
    plan: &FramePlan,
    vad_params: &VadParams,
    cfg: &FrontendConfig,
) -> Result<Extraction> {
    let vad = remove_silence(audio, plan, vad_params)?;
    let frames = frame_signal(audio, plan)?;
    let speech: Vec<&[f64]> = vad.speech_frame_indices().into_iter().map(|i| frames[i]).collect();
    if speech.is_empty() {
        return Err(Error::Empty("speech frames after silence removal"));
    }
    let hop_sec = plan.hop_sec(audio.sample_rate_hz());
    let statics = plp_static(&speech, audio.sample_rate_hz(), hop_sec, cfg)?;
    let features = normalize_features(&statics, cfg)?;
    Ok(Extraction { features, vad })
}
