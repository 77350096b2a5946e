use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::AdaptConfig;
use crate::classify::{Discriminativeness, HellingerConfig, Mode, ScoringOptions};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::gmm::EmConfig;
use crate::signal::VadParams;
use crate::transforms::{HldaConfig, HldaInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Manifest path; relative paths resolve against the config file.
    pub manifest: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { manifest: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { frame_ms: 25.0, hop_ms: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub enabled: bool,
    pub input_dim: usize,
    pub pca_dim: usize,
    pub context: usize,
    pub output_dim: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub init: HldaInit,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            input_dim: 39,
            pca_dim: 30,
            context: 1,
            output_dim: 20,
            max_iters: 100,
            tol: 1e-6,
            init: HldaInit::Whitening,
        }
    }
}

impl TransformConfig {
    pub fn hlda(&self) -> HldaConfig {
        HldaConfig {
            retained_dim: self.output_dim,
            context: self.context,
            max_iters: self.max_iters,
            tol: self.tol,
            init: self.init,
            ..HldaConfig::default()
        }
    }

    /// Dimension of the features the models see.
    pub fn model_dim(&self) -> usize {
        if self.enabled { self.output_dim } else { self.input_dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UbmConfig {
    pub components: usize,
    pub iters_per_stage: usize,
    pub final_iters: usize,
    pub var_floor_rel: f64,
    /// Training frames are subsampled to this many when set (0 = all).
    pub max_frames: usize,
}

impl Default for UbmConfig {
    fn default() -> Self {
        Self {
            components: 256,
            iters_per_stage: 5,
            final_iters: 10,
            var_floor_rel: 1e-6,
            max_frames: 0,
        }
    }
}

impl UbmConfig {
    pub fn em(&self, seed: u64) -> EmConfig {
        EmConfig {
            target_components: self.components,
            iters_per_stage: self.iters_per_stage,
            final_iters: self.final_iters,
            var_floor_rel: self.var_floor_rel,
            max_frames: (self.max_frames > 0).then_some(self.max_frames),
            seed,
            ..EmConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VowelConfig {
    pub ubm: UbmConfig,
    /// A vowel needs this many training frames per component to get models.
    pub min_frames_per_component: usize,
    pub confidence_threshold: f64,
    pub calibration_grid: Vec<f64>,
    pub discriminativeness: Discriminativeness,
    pub hellinger_samples: usize,
}

impl Default for VowelConfig {
    fn default() -> Self {
        Self {
            ubm: UbmConfig {
                components: 64,
                ..UbmConfig::default()
            },
            min_frames_per_component: 10,
            confidence_threshold: f64::NEG_INFINITY,
            calibration_grid: vec![-100.0, -90.0, -80.0, -70.0, -60.0, -50.0, -40.0, -30.0],
            discriminativeness: Discriminativeness::MeanDistance,
            hellinger_samples: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub mode: Mode,
    /// Frames scored per test utterance (0 = whole utterance).
    pub max_frames: usize,
    pub per_frame_normalize: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            max_frames: 2000,
            per_frame_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub frame: FrameConfig,
    pub vad: VadParams,
    pub frontend: FrontendConfig,
    pub transforms: TransformConfig,
    pub ubm: UbmConfig,
    pub adapt: AdaptConfig,
    pub vowels: VowelConfig,
    pub scoring: ScoringConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            corpus: CorpusConfig::default(),
            frame: FrameConfig::default(),
            vad: VadParams::default(),
            frontend: FrontendConfig::default(),
            transforms: TransformConfig::default(),
            ubm: UbmConfig::default(),
            adapt: AdaptConfig::default(),
            vowels: VowelConfig::default(),
            scoring: ScoringConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative manifest paths are
    /// resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if !cfg.corpus.manifest.is_empty() {
            let m = PathBuf::from(&cfg.corpus.manifest);
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.corpus.manifest = dir.join(m).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        let t = &self.transforms;
        if t.input_dim != self.frontend.output_dim() {
            return Err(Error::Config(format!(
                "transforms.input_dim {} differs from the front end's {} dimensions",
                t.input_dim,
                self.frontend.output_dim()
            )));
        }
        if t.enabled {
            if t.pca_dim == 0 || t.pca_dim > t.input_dim {
                return Err(Error::Config(format!(
                    "transforms.pca_dim {} must be in 1..={}",
                    t.pca_dim, t.input_dim
                )));
            }
            let spliced = t.pca_dim * (2 * t.context + 1);
            if t.output_dim == 0 || t.output_dim >= spliced {
                return Err(Error::Config(format!(
                    "transforms.output_dim {} must be below the spliced dimension {} = {} x {}",
                    t.output_dim,
                    spliced,
                    t.pca_dim,
                    2 * t.context + 1
                )));
            }
        }
        for (name, u) in [("ubm", &self.ubm), ("vowels.ubm", &self.vowels.ubm)] {
            u.em(0).validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        self.adapt.validate()?;
        if self.frame.hop_ms <= 0.0 || self.frame.frame_ms < self.frame.hop_ms {
            return Err(Error::Config("frame.frame_ms must be >= frame.hop_ms > 0".into()));
        }
        if self.vowels.hellinger_samples == 0 {
            return Err(Error::Config("vowels.hellinger_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn hellinger(&self) -> HellingerConfig {
        HellingerConfig {
            num_samples: self.vowels.hellinger_samples,
            seed: self.seed,
        }
    }

    pub fn scoring_options(&self, mode: Mode, threshold: f64) -> ScoringOptions {
        ScoringOptions {
            mode,
            max_frames: (self.scoring.max_frames > 0).then_some(self.scoring.max_frames),
            confidence_threshold: threshold,
            per_frame_normalize: self.scoring.per_frame_normalize,
        }
    }

    /// Tag naming the feature pipeline in reports.
    pub fn feature_tag(&self) -> String {
        let t = &self.transforms;
        if t.enabled {
            format!("PCA/HLDA_C{}_{}", t.context, t.output_dim)
        } else {
            format!("PLP_MVN_{}", t.input_dim)
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
