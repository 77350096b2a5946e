use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::classify::Mode;
use crate::error::{Error, Result};
use crate::vowels::Vowel;

/// Fixed layout of a pipeline workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<()> {
        for d in ["features/utt", "features/vad", "models/accents", "models/vowels", "reports/provenance"] {
            let p = self.root.join(d);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.tsv")
    }

    pub fn vad_segments(&self, i: usize) -> PathBuf {
        self.root.join(format!("features/vad/{i:05}.seg"))
    }

    pub fn vad_report(&self) -> PathBuf {
        self.root.join("reports/vad.json")
    }

    pub fn corpus_stats(&self) -> PathBuf {
        self.root.join("reports/corpus_stats.txt")
    }

    pub fn features(&self, i: usize) -> PathBuf {
        self.root.join(format!("features/utt/{i:05}.aff"))
    }

    pub fn labels(&self, i: usize) -> PathBuf {
        self.root.join(format!("features/utt/{i:05}.lab"))
    }

    pub fn transforms(&self) -> PathBuf {
        self.root.join("models/transforms.aft")
    }

    pub fn transform_report(&self) -> PathBuf {
        self.root.join("reports/transforms.json")
    }

    pub fn ubm(&self) -> PathBuf {
        self.root.join("models/ubm.agm")
    }

    pub fn ubm_report(&self) -> PathBuf {
        self.root.join("reports/ubm.json")
    }

    pub fn accent_model(&self, accent: &str) -> PathBuf {
        self.root.join(format!("models/accents/{accent}.agm"))
    }

    pub fn accent_manifest(&self) -> PathBuf {
        self.root.join("models/accents/manifest.tsv")
    }

    pub fn vowel_ubm(&self, v: Vowel) -> PathBuf {
        self.root.join(format!("models/vowels/{v}/ubm.agm"))
    }

    pub fn vowel_model(&self, v: Vowel, accent: &str) -> PathBuf {
        self.root.join(format!("models/vowels/{v}/{accent}.agm"))
    }

    pub fn vowel_manifest(&self) -> PathBuf {
        self.root.join("models/vowels/manifest.tsv")
    }

    pub fn weights(&self) -> PathBuf {
        self.root.join("models/weights.json")
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("models/calibration.json")
    }

    pub fn decisions(&self, mode: Mode) -> PathBuf {
        self.root.join(format!("reports/decisions_{mode}.tsv"))
    }

    pub fn report_json(&self, mode: Mode) -> PathBuf {
        self.root.join(format!("reports/eval_{mode}.json"))
    }

    pub fn report_table(&self, mode: Mode) -> PathBuf {
        self.root.join(format!("reports/eval_{mode}.txt"))
    }

    pub fn provenance(&self, stage: &str) -> PathBuf {
        self.root.join(format!("reports/provenance/{stage}.json"))
    }

    /// Errors with the stage that produces `path` when it is missing.
    pub fn require(&self, path: &Path, stage: &'static str) -> Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(Error::MissingPrerequisite {
                stage,
                artifact: path.to_path_buf(),
            })
        }
    }

    pub(crate) fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).display().to_string()
    }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_file(path, s)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// What a stage read and wrote, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Default)]
pub(crate) struct Recorder {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    pub fn finish(self, ws: &Workspace, stage: &str, config_sha256: String) -> Result<Provenance> {
        let digest = |paths: Vec<PathBuf>| -> Result<Vec<FileDigest>> {
            paths
                .par_iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: ws.display(p),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let prov = Provenance {
            stage: stage.to_string(),
            config_sha256,
            inputs: digest(self.inputs)?,
            outputs: digest(self.outputs)?,
        };
        write_json(&ws.provenance(stage), &prov)?;
        Ok(prov)
    }
}
