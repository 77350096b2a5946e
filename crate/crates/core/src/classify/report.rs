use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccentScore {
    pub accent: String,
    pub total: usize,
    pub correct: usize,
    /// `None` when the accent has no test utterances.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_accent: Vec<AccentScore>,
    /// Row-major `S x S`; rows are true accents, columns decisions.
    pub confusion: Vec<usize>,
    pub accents: Vec<String>,
    pub mode: Mode,
    pub feature_tag: String,
    pub seed: u64,
    pub utterances: usize,
    /// Vowel-mode utterances that had no usable vowel frames.
    pub no_evidence: usize,
}

impl EvalReport {
    pub fn from_decisions(
        accents: &[String],
        truth: &[usize],
        predicted: &[usize],
        mode: Mode,
        feature_tag: &str,
        seed: u64,
        no_evidence: usize,
    ) -> Self {
        let s = accents.len();
        let mut confusion = vec![0usize; s * s];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t * s + p] += 1;
        }
        let per_accent = accents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let total: usize = confusion[i * s..(i + 1) * s].iter().sum();
                let correct = confusion[i * s + i];
                AccentScore {
                    accent: a.clone(),
                    total,
                    correct,
                    accuracy: (total > 0).then(|| correct as f64 / total as f64),
                }
            })
            .collect();
        let correct: usize = (0..s).map(|i| confusion[i * s + i]).sum();
        let n = truth.len();
        Self {
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            per_accent,
            confusion,
            accents: accents.to_vec(),
            mode,
            feature_tag: feature_tag.to_string(),
            seed,
            utterances: n,
            no_evidence,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let s = self.accents.len();
        let width = self.accents.iter().map(|a| a.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "mode: {}  features: {}  seed: {}  utterances: {}",
            self.mode, self.feature_tag, self.seed, self.utterances
        );
        let _ = writeln!(out, "accuracy: {:.2}%", 100.0 * self.accuracy);
        let _ = write!(out, "\n{:<width$}", "true\\hyp");
        for a in &self.accents {
            let _ = write!(out, " {a:>width$}");
        }
        let _ = writeln!(out, " {:>8}", "acc%");
        for (i, row) in self.per_accent.iter().enumerate() {
            let _ = write!(out, "{:<width$}", row.accent);
            for j in 0..s {
                let _ = write!(out, " {:>width$}", self.confusion[i * s + j]);
            }
            match row.accuracy {
                Some(a) => {
                    let _ = writeln!(out, " {:>8.2}", 100.0 * a);
                }
                None => {
                    let _ = writeln!(out, " {:>8}", "-");
                }
            }
        }
        out
    }
}
