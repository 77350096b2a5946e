use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{split_corpus, CorpusManifest, ManifestEntry, Split};
use super::stats::{corpus_stats, CorpusStats, VadReport, VadRow};
use super::workspace::{read_json, write_file, write_json, Recorder, Workspace};
use crate::adapt::{adapt_all_accents, map_adapt};
use crate::classify::{
    calibrate_threshold, classify_item, vowel_discriminativeness, vowel_weights, AccentModelSet, Calibration,
    Discriminativeness, EvalItem, EvalReport, Mode,
};
use crate::error::{Error, Result};
use crate::frontend::{extract_features, FeatureMatrix};
use crate::gmm::{em_train, DiagGmm, EmStage};
use crate::signal::{read_wav, remove_silence, FramePlan};
use crate::transforms::{fit_hlda, fit_pca, LinearTransform, TransformChain};
use crate::vowels::{
    filter_by_confidence, frame_range, pool_capped, vowel_popularity, LabelEntry, LabelFile, Vowel, VowelPools,
    NUM_VOWELS, TICKS_PER_SEC,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Vad,
    Features,
    Transforms,
    Ubm,
    Adapt,
    VowelModels,
    Weights,
    Calibrate,
    Classify,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Vad,
        Stage::Features,
        Stage::Transforms,
        Stage::Ubm,
        Stage::Adapt,
        Stage::VowelModels,
        Stage::Weights,
        Stage::Calibrate,
        Stage::Classify,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Vad => "vad",
            Stage::Features => "features",
            Stage::Transforms => "transforms",
            Stage::Ubm => "ubm",
            Stage::Adapt => "adapt",
            Stage::VowelModels => "vowel-models",
            Stage::Weights => "weights",
            Stage::Calibrate => "calibrate",
            Stage::Classify => "classify",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages that need vowel labels.
    pub fn needs_labels(self) -> bool {
        matches!(self, Stage::VowelModels | Stage::Weights | Stage::Calibrate)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

/// Maps labels on the original frame grid onto the frames kept by silence
/// removal. A frame belongs to an entry when its center lies inside it;
/// kept frames of one entry are contiguous after removal.
pub fn remap_labels(labels: &LabelFile, speech_mask: &[bool], hop_ticks: u64) -> LabelFile {
    let mut kept_before = Vec::with_capacity(speech_mask.len() + 1);
    kept_before.push(0u64);
    for &m in speech_mask {
        kept_before.push(kept_before.last().unwrap() + m as u64);
    }
    let n = speech_mask.len();
    let entries = labels
        .entries
        .iter()
        .filter_map(|e| {
            let r = frame_range(e.start, e.end, hop_ticks);
            let (a, b) = (r.start.min(n), r.end.min(n));
            let (s, t) = (kept_before[a], kept_before[b]);
            (t > s).then(|| LabelEntry {
                start: s * hop_ticks,
                end: t * hop_ticks,
                phone: e.phone.clone(),
                confidence: e.confidence,
            })
        })
        .collect();
    LabelFile { entries }
}

fn hop_ticks(hop_sec: f64) -> u64 {
    (hop_sec * TICKS_PER_SEC as f64).round() as u64
}

fn in_context(path: &std::path::Path, e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::BadMagic { .. } | Error::Malformed { .. } => e,
        other => Error::Malformed {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TransformReport {
    feature_tag: String,
    pca_eigenvalues: Vec<f64>,
    hlda_objective: Vec<f64>,
    hlda_identity_objective: Option<f64>,
    hlda_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct UbmReport {
    frames_used: usize,
    stages: Vec<EmStage>,
}

/// Popularity, discriminativeness and the resulting weights, per vowel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VowelWeightFile {
    pub vowels: Vec<String>,
    pub frames: Vec<usize>,
    pub popularity: Vec<f64>,
    pub discriminativeness: Vec<f64>,
    pub weights: Vec<f64>,
    pub mode: Discriminativeness,
    pub hellinger_samples: usize,
    pub hellinger_seed: u64,
}

/// Runs pipeline stages against one workspace.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub workspace: Workspace,
}

struct Loaded {
    index: usize,
    accent: usize,
    features: FeatureMatrix,
    labels: Option<LabelFile>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, root: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let workspace = Workspace::new(root);
        workspace.create()?;
        Ok(Self { config, workspace })
    }

    pub fn mode(&self) -> Mode {
        self.config.scoring.mode
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        info!("stage {stage}");
        let mut rec = Recorder::default();
        match stage {
            Stage::Vad => self.vad(&mut rec)?,
            Stage::Features => self.features(&mut rec)?,
            Stage::Transforms => self.transforms(&mut rec)?,
            Stage::Ubm => self.ubm(&mut rec)?,
            Stage::Adapt => self.adapt(&mut rec)?,
            Stage::VowelModels => self.vowel_models(&mut rec)?,
            Stage::Weights => self.weights(&mut rec)?,
            Stage::Calibrate => self.calibrate(&mut rec)?,
            Stage::Classify => self.classify(&mut rec)?,
            Stage::Evaluate => self.evaluate(&mut rec)?,
        }
        rec.finish(&self.workspace, stage.name(), self.config.digest())?;
        Ok(())
    }

    /// Every stage in order. Vowel stages are skipped when the corpus has
    /// no label files and the scoring mode is baseline.
    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            if stage.needs_labels() && self.mode() == Mode::Baseline && !self.has_labels()? {
                info!("no label files, skipping {stage}");
                continue;
            }
            self.run(stage)?;
        }
        Ok(())
    }

    fn has_labels(&self) -> Result<bool> {
        Ok(self.split()?.entries.iter().any(|e| e.labels.is_some()))
    }

    pub fn split(&self) -> Result<CorpusManifest> {
        let p = self.workspace.split();
        self.workspace.require(&p, "vad")?;
        CorpusManifest::read(&p)
    }

    pub fn read_report(&self, mode: Mode) -> Result<EvalReport> {
        let p = self.workspace.report_json(mode);
        self.workspace.require(&p, "evaluate")?;
        read_json(&p)
    }

    pub fn read_corpus_stats(&self) -> Result<CorpusStats> {
        let split = self.split()?;
        let p = self.workspace.vad_report();
        self.workspace.require(&p, "vad")?;
        Ok(corpus_stats(&split, &read_json(&p)?))
    }

    fn accent_index(accents: &[String], e: &ManifestEntry) -> usize {
        accents.iter().position(|a| a == &e.accent).expect("accent from manifest")
    }

    fn vad(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        if self.config.corpus.manifest.is_empty() {
            return Err(Error::Config("corpus.manifest is not set".into()));
        }
        let mpath = PathBuf::from(&self.config.corpus.manifest);
        let mut manifest = CorpusManifest::read(&mpath)?;
        rec.input(&mpath);
        for e in &mut manifest.entries {
            e.audio = std::path::absolute(&e.audio).map_err(|err| Error::io(&e.audio, err))?;
            if let Some(l) = &e.labels {
                e.labels = Some(std::path::absolute(l).map_err(|err| Error::io(l, err))?);
            }
        }
        let split = if manifest.entries.iter().all(|e| e.split.is_some()) {
            manifest
        } else {
            split_corpus(&manifest, self.config.seed)?
        };
        split.write(ws.split())?;
        rec.output(ws.split());

        let fc = &self.config.frame;
        let rows = split
            .entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| -> Result<VadRow> {
                let (before, after, dur_before, dur_after) = if e.is_feature_archive() {
                    let f = FeatureMatrix::read(&e.audio)?;
                    let d = f.rows() as f64 * f.frame_hop_sec();
                    (f.rows(), f.rows(), d, d)
                } else {
                    let audio = read_wav(&e.audio)?;
                    let plan = FramePlan::from_millis(audio.sample_rate_hz(), fc.frame_ms, fc.hop_ms)?;
                    let vad = remove_silence(&audio, &plan, &self.config.vad).map_err(|err| in_context(&e.audio, err))?;
                    let hop = plan.hop_sec(audio.sample_rate_hz());
                    write_file(&ws.vad_segments(i), vad.format_segments(hop))?;
                    (
                        vad.num_frames(),
                        vad.speech_frames(),
                        audio.duration_sec(),
                        vad.speech_frames() as f64 * hop,
                    )
                };
                Ok(VadRow {
                    index: i,
                    accent: e.accent.clone(),
                    split: e.split,
                    frames_before: before,
                    frames_after: after,
                    duration_before: dur_before,
                    duration_after: dur_after,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, e) in split.entries.iter().enumerate() {
            rec.input(&e.audio);
            if !e.is_feature_archive() {
                rec.output(ws.vad_segments(i));
            }
        }
        let report = VadReport { utterances: rows };
        write_json(&ws.vad_report(), &report)?;
        write_file(&ws.corpus_stats(), corpus_stats(&split, &report).to_table())?;
        rec.output(ws.vad_report());
        rec.output(ws.corpus_stats());
        Ok(())
    }

    fn features(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let split = self.split()?;
        ws.require(&ws.vad_report(), "vad")?;
        rec.input(ws.split());
        let fc = &self.config.frame;
        let dim = self.config.transforms.input_dim;
        split
            .entries
            .par_iter()
            .enumerate()
            .try_for_each(|(i, e)| -> Result<()> {
                let labels = e.labels.as_ref().map(LabelFile::read).transpose()?;
                let (feats, labels) = if e.is_feature_archive() {
                    (FeatureMatrix::read(&e.audio)?, labels)
                } else {
                    let audio = read_wav(&e.audio)?;
                    let plan = FramePlan::from_millis(audio.sample_rate_hz(), fc.frame_ms, fc.hop_ms)?;
                    let ext = extract_features(&audio, &plan, &self.config.vad, &self.config.frontend)
                        .map_err(|err| in_context(&e.audio, err))?;
                    let hop = hop_ticks(plan.hop_sec(audio.sample_rate_hz()));
                    let labels = labels.map(|l| remap_labels(&l, &ext.vad.speech_mask, hop));
                    (ext.features, labels)
                };
                if feats.cols() != dim {
                    return Err(in_context(
                        &e.audio,
                        Error::DimMismatch {
                            context: "input features",
                            expected: dim,
                            got: feats.cols(),
                        },
                    ));
                }
                feats.write(ws.features(i))?;
                if let Some(l) = labels {
                    l.write(ws.labels(i))?;
                }
                Ok(())
            })?;
        for (i, e) in split.entries.iter().enumerate() {
            rec.input(&e.audio);
            rec.output(ws.features(i));
            if let Some(l) = &e.labels {
                rec.input(l);
                rec.output(ws.labels(i));
            }
        }
        Ok(())
    }

    fn load(&self, split: &CorpusManifest, which: Split, chain: Option<&TransformChain>, rec: &mut Recorder) -> Result<Vec<Loaded>> {
        let ws = &self.workspace;
        let accents = split.accents();
        let idx = split.indices(which);
        for &i in &idx {
            ws.require(&ws.features(i), "features")?;
            rec.input(ws.features(i));
            if ws.labels(i).is_file() {
                rec.input(ws.labels(i));
            }
        }
        idx.par_iter()
            .map(|&i| {
                let raw = FeatureMatrix::read(ws.features(i))?;
                let features = match chain {
                    Some(c) => c.apply(&raw)?,
                    None => raw,
                };
                let lp = ws.labels(i);
                let labels = if lp.is_file() { Some(LabelFile::read(&lp)?) } else { None };
                Ok(Loaded {
                    index: i,
                    accent: Self::accent_index(&accents, &split.entries[i]),
                    features,
                    labels,
                })
            })
            .collect()
    }

    fn chain(&self, rec: &mut Recorder) -> Result<TransformChain> {
        let p = self.workspace.transforms();
        self.workspace.require(&p, "transforms")?;
        rec.input(&p);
        TransformChain::read(&p)
    }

    fn concat(&self, parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts.first().ok_or(Error::Empty("training utterances"))?;
        FeatureMatrix::concat(first.cols(), first.frame_hop_sec(), parts.iter().copied())
    }

    fn transforms(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let split = self.split()?;
        let tc = &self.config.transforms;
        let train = self.load(&split, Split::Train, None, rec)?;
        let (chain, report) = if tc.enabled {
            let parts: Vec<&FeatureMatrix> = train.iter().map(|u| &u.features).collect();
            let pca = fit_pca(&self.concat(&parts)?, tc.pca_dim)?;
            let projected = train
                .par_iter()
                .map(|u| pca.transform.apply(&u.features))
                .collect::<Result<Vec<_>>>()?;
            let labeled: Vec<(&FeatureMatrix, usize)> = projected.iter().zip(&train).map(|(f, u)| (f, u.accent)).collect();
            let fit = fit_hlda(&labeled, split.accents().len(), &tc.hlda())?;
            info!("HLDA: {} cycles, converged {}", fit.objective.len() - 1, fit.converged);
            let report = TransformReport {
                feature_tag: self.config.feature_tag(),
                pca_eigenvalues: pca.eigenvalues.clone(),
                hlda_objective: fit.objective.clone(),
                hlda_identity_objective: Some(fit.identity_objective),
                hlda_converged: Some(fit.converged),
            };
            (TransformChain::new(vec![pca.transform, fit.transform])?, report)
        } else {
            let report = TransformReport {
                feature_tag: self.config.feature_tag(),
                pca_eigenvalues: Vec::new(),
                hlda_objective: Vec::new(),
                hlda_identity_objective: None,
                hlda_converged: None,
            };
            (TransformChain::new(vec![LinearTransform::identity(tc.input_dim)])?, report)
        };
        chain.write(ws.transforms())?;
        write_json(&ws.transform_report(), &report)?;
        rec.output(ws.transforms());
        rec.output(ws.transform_report());
        Ok(())
    }

    fn ubm(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let split = self.split()?;
        let chain = self.chain(rec)?;
        let train = self.load(&split, Split::Train, Some(&chain), rec)?;
        let parts: Vec<&FeatureMatrix> = train.iter().map(|u| &u.features).collect();
        let out = em_train(&self.concat(&parts)?, &self.config.ubm.em(self.config.seed))?;
        out.model.with_label("ubm").write(ws.ubm())?;
        write_json(
            &ws.ubm_report(),
            &UbmReport {
                frames_used: out.frames_used,
                stages: out.stages,
            },
        )?;
        rec.output(ws.ubm());
        rec.output(ws.ubm_report());
        Ok(())
    }

    fn adapt(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let split = self.split()?;
        let accents = split.accents();
        ws.require(&ws.ubm(), "ubm")?;
        let ubm = DiagGmm::read(ws.ubm())?;
        rec.input(ws.ubm());
        let chain = self.chain(rec)?;
        let train = self.load(&split, Split::Train, Some(&chain), rec)?;
        let per_accent = accents
            .iter()
            .enumerate()
            .map(|(s, a)| {
                let parts: Vec<&FeatureMatrix> = train.iter().filter(|u| u.accent == s).map(|u| &u.features).collect();
                let x = if parts.is_empty() {
                    FeatureMatrix::empty(ubm.dim(), 0.01)
                } else {
                    self.concat(&parts)?
                };
                Ok((a.clone(), x))
            })
            .collect::<Result<Vec<_>>>()?;
        let models = adapt_all_accents(&ubm, &per_accent, &self.config.adapt)?;
        let mut manifest = String::new();
        for (a, m) in accents.iter().zip(&models) {
            let p = ws.accent_model(a);
            m.write(&p)?;
            rec.output(&p);
            manifest.push_str(&format!("{a}\t{a}.agm\n"));
        }
        write_file(&ws.accent_manifest(), manifest)?;
        rec.output(ws.accent_manifest());
        Ok(())
    }

    fn vowel_pools(&self, utts: &[Loaded], threshold: f64) -> Result<Vec<(usize, VowelPools)>> {
        utts.par_iter()
            .filter_map(|u| u.labels.as_ref().map(|l| (u, l)))
            .map(|(u, l)| {
                let segs = filter_by_confidence(&l.vowel_segments(), threshold);
                let pools = pool_capped(&u.features, &segs, None)
                    .map_err(|e| in_context(&self.workspace.labels(u.index), e))?;
                Ok((u.accent, pools))
            })
            .collect()
    }

    fn vowel_models(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let split = self.split()?;
        let accents = split.accents();
        let chain = self.chain(rec)?;
        let train = self.load(&split, Split::Train, Some(&chain), rec)?;
        let dim = chain.out_dim().expect("chain has stages");
        let hop = train.first().map_or(0.01, |u| u.features.frame_hop_sec());
        let mut per_accent: Vec<VowelPools> = (0..accents.len()).map(|_| VowelPools::empty(dim, hop)).collect();
        for (s, pools) in self.vowel_pools(&train, self.config.vowels.confidence_threshold)? {
            per_accent[s].append(&pools)?;
        }
        let vc = &self.config.vowels;
        let needed = vc.ubm.components * vc.min_frames_per_component;
        let frames: Vec<usize> = (0..NUM_VOWELS)
            .map(|t| per_accent.iter().map(|p| p.pools[t].rows()).sum())
            .collect();
        if frames.iter().all(|&f| f == 0) {
            return Err(Error::Empty("vowel-labeled training frames"));
        }
        let cells = Vowel::ALL
            .par_iter()
            .map(|&v| -> Result<Option<(DiagGmm, Vec<DiagGmm>)>> {
                let t = v.index();
                if frames[t] < needed {
                    warn!("vowel {v}: {} training frames, need {needed}; no models", frames[t]);
                    return Ok(None);
                }
                let parts: Vec<&FeatureMatrix> = per_accent.iter().map(|p| &p.pools[t]).collect();
                let em = vc.ubm.em(self.config.seed ^ (t as u64 + 1));
                let ubm = em_train(&self.concat(&parts)?, &em)?.model.with_label(format!("{v}-ubm"));
                let models = accents
                    .iter()
                    .zip(&per_accent)
                    .map(|(a, p)| {
                        let x = &p.pools[t];
                        if x.is_empty() {
                            warn!("vowel {v}: no frames for accent {a}; using the vowel background model");
                            Ok(ubm.clone().with_label(a.clone()))
                        } else {
                            Ok(map_adapt(&ubm, x, &self.config.adapt)?.with_label(a.clone()))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some((ubm, models)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = String::from("vowel\taccent\tfile\tframes\n");
        for (v, cell) in Vowel::ALL.iter().zip(&cells) {
            let t = v.index();
            manifest.push_str(&format!("{v}\t-\t{v}/ubm.agm\t{}\n", frames[t]));
            let Some((ubm, models)) = cell else {
                continue;
            };
            ubm.write(ws.vowel_ubm(*v))?;
            rec.output(ws.vowel_ubm(*v));
            for ((a, m), p) in accents.iter().zip(models).zip(&per_accent) {
                m.write(ws.vowel_model(*v, a))?;
                rec.output(ws.vowel_model(*v, a));
                manifest.push_str(&format!("{v}\t{a}\t{v}/{a}.agm\t{}\n", p.pools[t].rows()));
            }
        }
        write_file(&ws.vowel_manifest(), manifest)?;
        rec.output(ws.vowel_manifest());
        Ok(())
    }

    /// `(grid, per-vowel training frames)` from the vowel model manifest.
    fn vowel_grid(&self, accents: &[String], rec: &mut Recorder) -> Result<(Vec<Vec<Option<DiagGmm>>>, [usize; NUM_VOWELS])> {
        let ws = &self.workspace;
        let mp = ws.vowel_manifest();
        ws.require(&mp, "vowel-models")?;
        rec.input(&mp);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let mut grid = vec![vec![None; NUM_VOWELS]; accents.len()];
        let mut frames = [0usize; NUM_VOWELS];
        let malformed = |line: usize, m: &str| Error::Malformed {
            path: mp.clone(),
            message: format!("line {line}: {m}"),
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(malformed(i + 1, "expected 4 fields"));
            }
            let v: Vowel = f[0].parse().map_err(|_| malformed(i + 1, "unknown vowel"))?;
            if f[1] == "-" {
                frames[v.index()] = f[3].parse().map_err(|_| malformed(i + 1, "bad frame count"))?;
                continue;
            }
            let s = accents
                .iter()
                .position(|a| a == f[1])
                .ok_or_else(|| Error::UnknownAccent(f[1].to_string()))?;
            let p = ws.root().join("models/vowels").join(f[2]);
            rec.input(&p);
            grid[s][v.index()] = Some(DiagGmm::read(&p)?);
        }
        Ok((grid, frames))
    }

    fn weights(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let accents = self.split()?.accents();
        let (grid, frames) = self.vowel_grid(&accents, rec)?;
        let mode = self.config.vowels.discriminativeness;
        let hc = self.config.hellinger();
        let d = vowel_discriminativeness(&grid, mode, &hc)?;
        let r = vowel_popularity(&frames)?;
        let w = vowel_weights(&r, &d)?;
        let file = VowelWeightFile {
            vowels: Vowel::ALL.iter().map(|v| v.to_string()).collect(),
            frames: frames.to_vec(),
            popularity: r.to_vec(),
            discriminativeness: d,
            weights: w,
            mode,
            hellinger_samples: hc.num_samples,
            hellinger_seed: hc.seed,
        };
        write_json(&ws.weights(), &file)?;
        rec.output(ws.weights());
        Ok(())
    }

    pub fn read_weights(&self) -> Result<VowelWeightFile> {
        let p = self.workspace.weights();
        self.workspace.require(&p, "weights")?;
        read_json(&p)
    }

    fn model_set(&self, accents: &[String], mode: Mode, rec: &mut Recorder) -> Result<AccentModelSet> {
        let ws = &self.workspace;
        let ms = AccentModelSet::new(accents.to_vec())?;
        match mode {
            Mode::Baseline => {
                ws.require(&ws.accent_manifest(), "adapt")?;
                rec.input(ws.accent_manifest());
                let models = accents
                    .iter()
                    .map(|a| {
                        let p = ws.accent_model(a);
                        ws.require(&p, "adapt")?;
                        rec.input(&p);
                        DiagGmm::read(&p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                ms.with_baseline(models)
            }
            Mode::Vowel => {
                let (grid, _) = self.vowel_grid(accents, rec)?;
                let w = self.read_weights()?;
                rec.input(ws.weights());
                ms.with_vowel_grid(grid)?.with_vowel_weights(w.weights)
            }
        }
    }

    fn items(&self, split: &CorpusManifest, which: Split, rec: &mut Recorder) -> Result<Vec<(usize, EvalItem)>> {
        let chain = self.chain(rec)?;
        let accents = split.accents();
        Ok(self
            .load(split, which, Some(&chain), rec)?
            .into_iter()
            .map(|u| {
                (
                    u.index,
                    EvalItem {
                        accent: accents[u.accent].clone(),
                        segments: u.labels.map(|l| l.vowel_segments()).unwrap_or_default(),
                        features: u.features,
                    },
                )
            })
            .collect())
    }

    fn calibrate(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let split = self.split()?;
        let ms = self.model_set(&split.accents(), Mode::Vowel, rec)?;
        let dev: Vec<EvalItem> = self.items(&split, Split::Dev, rec)?.into_iter().map(|(_, it)| it).collect();
        let opts = self.config.scoring_options(Mode::Vowel, f64::NEG_INFINITY);
        let cal = calibrate_threshold(&ms, &dev, &self.config.vowels.calibration_grid, &opts)?;
        info!("calibrated confidence threshold {}", cal.threshold);
        write_json(&ws.calibration(), &cal)?;
        rec.output(ws.calibration());
        Ok(())
    }

    pub fn read_calibration(&self) -> Result<Calibration> {
        let p = self.workspace.calibration();
        self.workspace.require(&p, "calibrate")?;
        read_json(&p)
    }

    /// Calibrated threshold when available, the configured one otherwise.
    fn threshold(&self, rec: &mut Recorder) -> Result<f64> {
        let p = self.workspace.calibration();
        if p.is_file() {
            rec.input(&p);
            Ok(self.read_calibration()?.threshold)
        } else {
            Ok(self.config.vowels.confidence_threshold)
        }
    }

    fn classify(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let mode = self.mode();
        let split = self.split()?;
        let ms = self.model_set(&split.accents(), mode, rec)?;
        let threshold = if mode == Mode::Vowel { self.threshold(rec)? } else { f64::NEG_INFINITY };
        let opts = self.config.scoring_options(mode, threshold);
        let items = self.items(&split, Split::Test, rec)?;
        let decisions = items
            .par_iter()
            .map(|(_, it)| classify_item(&ms, it, &opts))
            .collect::<Result<Vec<_>>>()?;
        let mut out = format!("# mode={mode} threshold={threshold}\nindex\ttrue\tchosen\tevidence");
        for a in &ms.accents {
            out.push_str(&format!("\t{a}"));
        }
        out.push('\n');
        for ((i, it), (r, evidence)) in items.iter().zip(&decisions) {
            out.push_str(&format!("{i}\t{}\t{}\t{}", it.accent, r.chosen_accent, *evidence as u8));
            for s in &r.scores {
                out.push_str(&format!("\t{s}"));
            }
            out.push('\n');
        }
        write_file(&ws.decisions(mode), out)?;
        rec.output(ws.decisions(mode));
        Ok(())
    }

    fn evaluate(&self, rec: &mut Recorder) -> Result<()> {
        let ws = &self.workspace;
        let mode = self.mode();
        let accents = self.split()?.accents();
        let p = ws.decisions(mode);
        ws.require(&p, "classify")?;
        rec.input(&p);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let (mut truth, mut predicted, mut no_evidence) = (Vec::new(), Vec::new(), 0);
        for (n, line) in text.lines().enumerate().skip(2) {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Malformed {
                path: p.clone(),
                message: format!("line {}", n + 1),
            };
            if f.len() < 4 {
                return Err(bad());
            }
            let idx = |label: &str| {
                accents
                    .iter()
                    .position(|a| a == label)
                    .ok_or_else(|| Error::UnknownAccent(label.to_string()))
            };
            truth.push(idx(f[1])?);
            predicted.push(idx(f[2])?);
            if f[3] == "0" {
                no_evidence += 1;
            }
        }
        let report = EvalReport::from_decisions(
            &accents,
            &truth,
            &predicted,
            mode,
            &self.config.feature_tag(),
            self.config.seed,
            no_evidence,
        );
        write_file(&ws.report_json(mode), report.to_json())?;
        write_file(&ws.report_table(mode), report.to_table())?;
        rec.output(ws.report_json(mode));
        rec.output(ws.report_table(mode));
        Ok(())
    }
}
