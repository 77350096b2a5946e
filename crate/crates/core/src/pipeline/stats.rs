use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, Split};

/// Silence-removal outcome for one manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadRow {
    pub index: usize,
    pub accent: String,
    pub split: Option<Split>,
    pub frames_before: usize,
    pub frames_after: usize,
    pub duration_before: f64,
    pub duration_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadReport {
    pub utterances: Vec<VadRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccentStats {
    pub accent: String,
    pub utterances: usize,
    pub proportion: f64,
    /// Seconds before silence removal.
    pub duration_before: f64,
    pub duration_after: f64,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub accents: Vec<AccentStats>,
    pub total: AccentStats,
}

fn row(accent: &str, rows: &[&VadRow], all: usize) -> AccentStats {
    let before: f64 = rows.iter().map(|r| r.duration_before).sum();
    let after: f64 = rows.iter().map(|r| r.duration_after).sum();
    AccentStats {
        accent: accent.to_string(),
        utterances: rows.len(),
        proportion: if all == 0 { 0.0 } else { rows.len() as f64 / all as f64 },
        duration_before: before,
        duration_after: after,
        compression_ratio: if before > 0.0 { after / before } else { 0.0 },
    }
}

/// Per-accent utterance counts and durations around silence removal.
pub fn corpus_stats(manifest: &CorpusManifest, vad: &VadReport) -> CorpusStats {
    let n = vad.utterances.len();
    let accents = manifest
        .accents()
        .iter()
        .map(|a| {
            let rows: Vec<&VadRow> = vad.utterances.iter().filter(|r| &r.accent == a).collect();
            row(a, &rows, n)
        })
        .collect();
    let all: Vec<&VadRow> = vad.utterances.iter().collect();
    CorpusStats {
        accents,
        total: row("total", &all, n),
    }
}

/// `H:MM:SS`, rounded to the nearest second.
pub fn format_hms(seconds: f64) -> String {
    let s = seconds.max(0.0).round() as u64;
    format!("{}:{:02}:{:02}", s / 3600, s / 60 % 60, s % 60)
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let width = self
            .accents
            .iter()
            .map(|a| a.accent.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} {:>6} {:>7} {:>10} {:>10} {:>8}",
            "accent", "utts", "prop%", "dur1", "dur2", "ratio%"
        );
        for r in self.accents.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{:<width$} {:>6} {:>7.2} {:>10} {:>10} {:>8.2}",
                r.accent,
                r.utterances,
                100.0 * r.proportion,
                format_hms(r.duration_before),
                format_hms(r.duration_after),
                100.0 * r.compression_ratio
            );
        }
        out
    }
}
