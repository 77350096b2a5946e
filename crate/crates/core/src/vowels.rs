//! Phone label files, vowel segments, and per-vowel frame pooling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

/// Label time unit: 100 ns.
pub const TICKS_PER_SEC: u64 = 10_000_000;

pub const NUM_VOWELS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vowel {
    Aa,
    Ae,
    Ah,
    Ao,
    Aw,
    Ay,
    Eh,
    Er,
    Ey,
    Ih,
    Iy,
    Ow,
    Oy,
    Uh,
    Uw,
}

impl Vowel {
    pub const ALL: [Vowel; NUM_VOWELS] = [
        Vowel::Aa,
        Vowel::Ae,
        Vowel::Ah,
        Vowel::Ao,
        Vowel::Aw,
        Vowel::Ay,
        Vowel::Eh,
        Vowel::Er,
        Vowel::Ey,
        Vowel::Ih,
        Vowel::Iy,
        Vowel::Ow,
        Vowel::Oy,
        Vowel::Uh,
        Vowel::Uw,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Vowel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Vowel::Aa => "aa",
            Vowel::Ae => "ae",
            Vowel::Ah => "ah",
            Vowel::Ao => "ao",
            Vowel::Aw => "aw",
            Vowel::Ay => "ay",
            Vowel::Eh => "eh",
            Vowel::Er => "er",
            Vowel::Ey => "ey",
            Vowel::Ih => "ih",
            Vowel::Iy => "iy",
            Vowel::Ow => "ow",
            Vowel::Oy => "oy",
            Vowel::Uh => "uh",
            Vowel::Uw => "uw",
        }
    }
}

impl fmt::Display for Vowel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Vowel {
    type Err = Error;

    /// Accepts any case and trailing stress digits.
    fn from_str(s: &str) -> Result<Self> {
        let base = normalize_phone(s);
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == base)
            .ok_or_else(|| Error::invalid(format!("`{s}` is not a vowel")))
    }
}

/// Lowercase with stress digits removed.
pub fn normalize_phone(label: &str) -> String {
    label.trim_end_matches(|c: char| c.is_ascii_digit()).to_ascii_lowercase()
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEntry {
    pub start: u64,
    pub end: u64,
    pub phone: String,
    pub confidence: Option<f64>,
}

impl LabelEntry {
    pub fn vowel(&self) -> Option<Vowel> {
        self.phone.parse().ok()
    }

    pub fn start_sec(&self) -> f64 {
        self.start as f64 / TICKS_PER_SEC as f64
    }

    pub fn end_sec(&self) -> f64 {
        self.end as f64 / TICKS_PER_SEC as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VowelSegment {
    /// Times in 100 ns ticks.
    pub start: u64,
    pub end: u64,
    pub vowel: Vowel,
    pub confidence: Option<f64>,
}

impl VowelSegment {
    pub fn start_sec(&self) -> f64 {
        self.start as f64 / TICKS_PER_SEC as f64
    }

    pub fn end_sec(&self) -> f64 {
        self.end as f64 / TICKS_PER_SEC as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelFile {
    pub entries: Vec<LabelEntry>,
}

impl LabelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<LabelEntry> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: line_no, message };
            if !(3..=4).contains(&fields.len()) {
                return Err(err(format!("expected 3 or 4 fields, got {}", fields.len())));
            }
            let start: u64 = fields[0].parse().map_err(|_| err(format!("bad start time `{}`", fields[0])))?;
            let end: u64 = fields[1].parse().map_err(|_| err(format!("bad end time `{}`", fields[1])))?;
            if end <= start {
                return Err(err(format!("end {end} not after start {start}")));
            }
            let confidence = match fields.get(3) {
                Some(s) => Some(
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("bad score `{s}`")))?,
                ),
                None => None,
            };
            if let Some(prev) = entries.last() {
                if start < prev.end {
                    return Err(err(format!("segment starting at {start} overlaps previous ending at {}", prev.end)));
                }
            }
            entries.push(LabelEntry {
                start,
                end,
                phone: normalize_phone(fields[2]),
                confidence,
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message } => Error::Malformed {
                path: path.to_path_buf(),
                message: format!("line {line}: {message}"),
            },
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn vowel_segments(&self) -> Vec<VowelSegment> {
        self.entries
            .iter()
            .filter_map(|e| {
                e.vowel().map(|vowel| VowelSegment {
                    start: e.start,
                    end: e.end,
                    vowel,
                    confidence: e.confidence,
                })
            })
            .collect()
    }
}

impl fmt::Display for LabelFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            write!(f, "{} {} {}", e.start, e.end, e.phone)?;
            if let Some(c) = e.confidence {
                write!(f, " {c}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Keeps scored segments at or above `threshold` and every unscored one.
pub fn filter_by_confidence(segs: &[VowelSegment], threshold: f64) -> Vec<VowelSegment> {
    segs.iter()
        .filter(|s| s.confidence.is_none_or(|c| c >= threshold))
        .cloned()
        .collect()
}

/// Frames pooled per vowel, indexed by [`Vowel::index`].
#[derive(Debug, Clone)]
pub struct VowelPools {
    pub pools: Vec<FeatureMatrix>,
}

impl VowelPools {
    pub fn empty(dim: usize, frame_hop_sec: f64) -> Self {
        Self {
            pools: vec![FeatureMatrix::empty(dim, frame_hop_sec); NUM_VOWELS],
        }
    }

    pub fn get(&self, v: Vowel) -> &FeatureMatrix {
        &self.pools[v.index()]
    }

    pub fn frame_counts(&self) -> [usize; NUM_VOWELS] {
        std::array::from_fn(|i| self.pools[i].rows())
    }

    pub fn total_frames(&self) -> usize {
        self.pools.iter().map(|p| p.rows()).sum()
    }

    pub fn append(&mut self, other: &VowelPools) -> Result<()> {
        for (a, b) in self.pools.iter_mut().zip(&other.pools) {
            a.append(b)?;
        }
        Ok(())
    }
}

fn hop_ticks(hop_sec: f64) -> Result<u64> {
    let h = (hop_sec * TICKS_PER_SEC as f64).round();
    if !(h >= 1.0) {
        return Err(Error::invalid(format!("frame hop {hop_sec} s is too small")));
    }
    Ok(h as u64)
}

/// Frames `k` whose center `k*hop + hop/2` lies in `[start, end)`.
pub fn frame_range(start: u64, end: u64, hop: u64) -> std::ops::Range<usize> {
    // Doubled to keep the half-hop offset integral.
    let first = (2 * start).saturating_sub(hop).div_ceil(2 * hop);
    let stop = (2 * end).saturating_sub(hop).div_ceil(2 * hop);
    first as usize..stop.max(first) as usize
}

/// Concatenates each vowel's frames in utterance order.
pub fn pool_vowel_features(feats: &FeatureMatrix, segs: &[VowelSegment]) -> Result<VowelPools> {
    pool_capped(feats, segs, None)
}

/// As [`pool_vowel_features`], using only the first `max_frames` frames.
pub fn pool_capped(feats: &FeatureMatrix, segs: &[VowelSegment], max_frames: Option<usize>) -> Result<VowelPools> {
    let hop = hop_ticks(feats.frame_hop_sec())?;
    let k = feats.rows();
    let duration = k as u64 * hop;
    let limit = max_frames.map_or(k, |m| m.min(k));
    let mut idx: Vec<Vec<usize>> = vec![Vec::new(); NUM_VOWELS];
    for s in segs {
        // A partial trailing frame is tolerated.
        if s.end > duration + hop {
            return Err(Error::invalid(format!(
                "vowel segment {}..{} s extends beyond features ending at {} s",
                s.start_sec(),
                s.end_sec(),
                duration as f64 / TICKS_PER_SEC as f64
            )));
        }
        let r = frame_range(s.start, s.end, hop);
        idx[s.vowel.index()].extend(r.start.min(limit)..r.end.min(limit));
    }
    let pools = idx
        .iter_mut()
        .map(|ix| {
            ix.sort_unstable();
            ix.dedup();
            feats.select_rows(ix)
        })
        .collect();
    Ok(VowelPools { pools })
}

/// Share of vowel frames per vowel.
pub fn vowel_popularity(counts: &[usize; NUM_VOWELS]) -> Result<[f64; NUM_VOWELS]> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("vowel frames"));
    }
    Ok(std::array::from_fn(|i| counts[i] as f64 / total as f64))
}
