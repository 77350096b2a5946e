use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accent that can be split 70:15:15 with a non-empty dev and test set.
pub const MIN_UTTERANCES_PER_ACCENT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// A `.wav` file, or an `.aff` archive of already normalized features.
    pub audio: PathBuf,
    pub labels: Option<PathBuf>,
    pub accent: String,
    pub split: Option<Split>,
}

impl ManifestEntry {
    pub fn is_feature_archive(&self) -> bool {
        self.audio.extension().is_some_and(|e| e.eq_ignore_ascii_case("aff"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: Option<u64>,
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

impl CorpusManifest {
    /// Parses `<audio>\t<labels>\t<accent>` lines, with an optional fourth
    /// split column. `-` means no label file. Blank lines and `#` comments
    /// are skipped. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim_end_matches('\r');
            if t.trim().is_empty() || t.trim_start().starts_with('#') {
                continue;
            }
            let f: Vec<&str> = t.split('\t').collect();
            if !(3..=4).contains(&f.len()) || f[..3].iter().any(|s| s.is_empty()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected <audio>\\t<labels>\\t<accent>[\\t<split>]".into(),
                });
            }
            let split = match f.get(3) {
                Some(s) => Some(s.parse().map_err(|e: Error| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?),
                None => None,
            };
            entries.push(ManifestEntry {
                audio: resolve(base, f[0]),
                labels: (f[1] != "-").then(|| resolve(base, f[1])),
                accent: f[2].to_string(),
                split,
            });
        }
        if entries.is_empty() {
            return Err(Error::Empty("corpus manifest"));
        }
        Ok(Self { entries, seed: None })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent()).map_err(|e| match e {
            Error::Parse { line, message } => Error::Malformed {
                path: path.to_path_buf(),
                message: format!("line {line}: {message}"),
            },
            other => other,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let labels = e.labels.as_ref().map_or("-".into(), |p| p.display().to_string());
            out.push_str(&format!("{}\t{}\t{}", e.audio.display(), labels, e.accent));
            if let Some(s) = e.split {
                out.push_str(&format!("\t{s}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Accent labels in order of first appearance.
    pub fn accents(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.accent) {
                out.push(e.accent.clone());
            }
        }
        out
    }

    /// Manifest indices of the entries in `split`, ascending.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].split == Some(split))
            .collect()
    }
}

/// Train/dev/test sizes for `n` utterances: 70% and 15% rounded, test takes the rest.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.70 * n as f64).round() as usize;
    let dev = (0.15 * n as f64).round() as usize;
    (train, dev, n - train - dev)
}

/// Stratified 70:15:15 assignment. Each accent's entries are shuffled with
/// the seeded generator, in accent order of first appearance.
pub fn split_corpus(manifest: &CorpusManifest, seed: u64) -> Result<CorpusManifest> {
    let mut out = manifest.clone();
    out.seed = Some(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for accent in manifest.accents() {
        let mut idx: Vec<usize> = (0..manifest.entries.len())
            .filter(|&i| manifest.entries[i].accent == accent)
            .collect();
        if idx.len() < MIN_UTTERANCES_PER_ACCENT {
            return Err(Error::TooShort {
                what: "utterances per accent for a 70:15:15 split",
                needed: MIN_UTTERANCES_PER_ACCENT,
                got: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let (train, dev, _) = split_sizes(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            out.entries[i].split = Some(if k < train {
                Split::Train
            } else if k < train + dev {
                Split::Dev
            } else {
                Split::Test
            });
        }
    }
    Ok(out)
}
