//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use accent_forge::adapt::{map_adapt, AdaptConfig};
use accent_forge::classify::{hellinger_closed_form, hellinger_mc, HellingerConfig, Mode};
use accent_forge::frontend::feature_warp;
use accent_forge::gmm::{em_train, DiagGmm, EmConfig};
use accent_forge::numeric::std_normal_cdf;
use accent_forge::pipeline::{
    generate_audio_corpus, generate_synthetic_corpus, synth_tone_silence, AccentStyle, Pipeline, PipelineConfig,
    Stage, SyntheticSpec, ToneSilenceSpec,
};
use accent_forge::signal::{mask_to_segments, remove_silence, FramePlan, VadParams};
use accent_forge::transforms::{
    fit_hlda_stats, fit_lda, fit_pca, principal_angles, scatter_matrices, ClassStats, HldaConfig, HldaInit,
};
use accent_forge::vowels::Vowel;
use accent_forge::FeatureMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian_frames(rows: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let c = &centers[rng.random_range(0..centers.len())];
        for mu in c {
            let z: f64 = rng.sample(StandardNormal);
            data.push(mu + z);
        }
    }
    FeatureMatrix::new(data, rows, dim, 0.01).unwrap()
}

fn em_monotonicity() -> Outcome {
    let t = Instant::now();
    let x = gaussian_frames(10_000, 5, 1);
    let cfg = EmConfig {
        target_components: 32,
        iters_per_stage: 10,
        final_iters: 20,
        ..EmConfig::default()
    };
    let out = em_train(&x, &cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for s in &out.stages {
        for w in s.loglik.windows(2) {
            worst = worst.max((w[0] - w[1]) / w[0].abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        out.is_monotone(1e-8) && secs < 30.0,
        format!("{} stages, worst relative drop {worst:.2e}, {secs:.1} s", out.stages.len()),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn map_limits() -> Outcome {
    let x = gaussian_frames(4000, 4, 2);
    let ubm = em_train(
        &x,
        &EmConfig {
            target_components: 8,
            ..EmConfig::default()
        },
    )
    .map_err(|e| e.to_string())?
    .model;
    let adapt_x = gaussian_frames(500, 4, 3);

    let frozen = map_adapt(&ubm, &adapt_x, &AdaptConfig::with_relevance(f64::INFINITY)).map_err(|e| e.to_string())?;
    let d_inf = max_abs_diff(frozen.weights(), ubm.weights())
        .max(max_abs_diff(frozen.means(), ubm.means()))
        .max(max_abs_diff(frozen.variances(), ubm.variances()));

    let free = map_adapt(&ubm, &adapt_x, &AdaptConfig::means_only(1e-14)).map_err(|e| e.to_string())?;
    // Oracle: posterior-weighted frame average computed here from the UBM.
    let mut num = vec![0.0; ubm.num_components() * ubm.dim()];
    let mut den = vec![0.0; ubm.num_components()];
    for k in 0..adapt_x.rows() {
        let row = adapt_x.row(k);
        let logs: Vec<f64> = (0..ubm.num_components())
            .map(|i| ubm.weights()[i].ln() + ubm.log_component_density(i, row).unwrap())
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        for (i, l) in logs.iter().enumerate() {
            let g = (l - m).exp() / z;
            den[i] += g;
            for d in 0..ubm.dim() {
                num[i * ubm.dim() + d] += g * row[d];
            }
        }
    }
    let mut d_zero = 0.0f64;
    let mut used = 0;
    for i in 0..ubm.num_components() {
        if den[i] > 1e-3 {
            used += 1;
            let e: Vec<f64> = (0..ubm.dim()).map(|d| num[i * ubm.dim() + d] / den[i]).collect();
            d_zero = d_zero.max(max_abs_diff(free.mean(i), &e));
        }
    }

    let full = map_adapt(&ubm, &adapt_x, &AdaptConfig::with_relevance(4.0)).map_err(|e| e.to_string())?;
    let wsum = (full.weights().iter().sum::<f64>() - 1.0).abs();
    check(
        d_inf < 1e-10 && d_zero < 1e-8 && wsum < 1e-10,
        format!("r=inf diff {d_inf:.1e}; r->0 vs E(x) {d_zero:.1e} over {used} components; |sum w - 1| {wsum:.1e}"),
    )
}

fn hellinger_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut worst_self = 0.0f64;
    for draw in 0..20u64 {
        let dim = 3;
        let mut gauss = || {
            let m: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(0.3..3.0)).collect();
            DiagGmm::single(m, v, "g").unwrap()
        };
        let p = gauss();
        let q = gauss();
        let cfg = HellingerConfig {
            num_samples: 50_000,
            seed: draw,
        };
        let mc = hellinger_mc(&p, &q, &cfg).map_err(|e| e.to_string())?;
        let exact = hellinger_closed_form(&p, &q).map_err(|e| e.to_string())?;
        worst = worst.max((mc - exact).abs());
        worst_self = worst_self.max(hellinger_mc(&p, &p, &cfg).map_err(|e| e.to_string())?);
    }
    check(
        worst < 0.01 && worst_self < 0.02,
        format!("max |MC - exact| {worst:.4}; max H(p,p) {worst_self:.4}"),
    )
}

fn homoscedastic(classes: usize, n: usize, p: usize, per_class: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nrm = Normal::new(0.0, 1.0).unwrap();
    let sd: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..n).map(|d| if d < p { rng.random_range(-3.0..3.0) } else { 0.0 }).collect())
        .collect();
    let mix = DMatrix::from_fn(n, n, |r, c| if r == c { 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5));
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (c, mu) in means.iter().enumerate() {
        for _ in 0..per_class {
            let z = DVector::from_iterator(n, (0..n).map(|d| mu[d] + sd[d] * nrm.sample(&mut rng)));
            data.extend((&mix * z).iter().copied());
            labels.push(c);
        }
    }
    (FeatureMatrix::new(data, labels.len(), n, 0.01).unwrap(), labels)
}

fn transform_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Random rotation of diag(4, 1, 0.25).
    let q = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let scale = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5]));
    let mix = &q * scale;
    let mut data = Vec::new();
    for _ in 0..20_000 {
        let z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        data.extend((&mix * z).iter().copied());
    }
    let x = FeatureMatrix::new(data, 20_000, 3, 0.01).unwrap();
    let pca = fit_pca(&x, 3).map_err(|e| e.to_string())?;
    let m = &pca.transform.matrix;
    let ortho = max_abs_diff((m * m.transpose()).as_slice(), DMatrix::<f64>::identity(3, 3).as_slice());
    let eig_err = pca
        .eigenvalues
        .iter()
        .zip([4.0, 1.0, 0.25])
        .map(|(got, want)| (got - want).abs() / want)
        .fold(0.0, f64::max);

    let (hx, labels) = homoscedastic(4, 6, 3, 4000, 1);
    let sp = scatter_matrices(&hx, &labels).map_err(|e| e.to_string())?;
    // Oracle: total covariance about the global mean, straight from the frames.
    let k = hx.rows() as f64;
    let mean = DVector::from_fn(6, |d, _| hx.column(d).iter().sum::<f64>() / k);
    let mut total = DMatrix::zeros(6, 6);
    for r in 0..hx.rows() {
        let v = DVector::from_row_slice(hx.row(r)) - &mean;
        total += &v * v.transpose();
    }
    total /= k;
    let scatter_err = max_abs_diff(sp.total().as_slice(), total.as_slice());

    let stats = ClassStats::from_frames(&hx, &labels, 4).map_err(|e| e.to_string())?;
    let cfg = HldaConfig {
        retained_dim: 3,
        context: 0,
        ..HldaConfig::default()
    };
    let fit = fit_hlda_stats(&stats, &cfg).map_err(|e| e.to_string())?;
    let lda = fit_lda(&sp, 3).map_err(|e| e.to_string())?;
    let max_angle = principal_angles(&fit.transform.matrix, &lda.matrix)
        .into_iter()
        .fold(0.0, f64::max);
    let monotone_cfg = HldaConfig {
        init: HldaInit::Identity,
        tol: 1e-12,
        max_iters: 40,
        ..cfg
    };
    let trace = fit_hlda_stats(&stats, &monotone_cfg).map_err(|e| e.to_string())?.objective;
    let monotone = fit.objective.windows(2).chain(trace.windows(2)).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs());
    let secs = t.elapsed().as_secs_f64();
    check(
        ortho < 1e-8 && eig_err < 0.05 && scatter_err < 1e-10 && monotone && max_angle < 1e-2 && secs < 60.0,
        format!(
            "PCA orthonormality {ortho:.1e}, eigenvalue error {:.2}%, scatter identity {scatter_err:.1e}, \
             HLDA monotone {monotone}, max principal angle {max_angle:.1e} rad, {secs:.1} s",
            100.0 * eig_err
        ),
    )
}

fn ks_statistic(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = std_normal_cdf(x);
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

fn warping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let exp = Exp::new(1.0).unwrap();
    let data: Vec<f64> = (0..3000 * 3).map(|_| exp.sample(&mut rng)).collect();
    let f = FeatureMatrix::new(data, 3000, 3, 0.01).unwrap();
    let out = feature_warp(&f, 301).map_err(|e| e.to_string())?;
    let ks = (0..3).map(|d| ks_statistic(out.column(d))).fold(0.0, f64::max);
    let g_data: Vec<f64> = f.as_slice().iter().map(|x| (x * 0.7).exp() * 3.0 - 1.0).collect();
    let g = FeatureMatrix::new(g_data, 3000, 3, 0.01).unwrap();
    let same = feature_warp(&g, 301).map_err(|e| e.to_string())?.as_slice() == out.as_slice();
    check(ks < 0.05 && same, format!("max KS {ks:.4}; bitwise invariant {same}"))
}

fn vad() -> Outcome {
    let plan = FramePlan::from_millis(16_000, 25.0, 10.0).unwrap();
    let mut worst_acc = 1.0f64;
    let mut worst_boundary = 0usize;
    let mut counts_match = true;
    let (mut speech, mut frames) = (0usize, 0usize);
    for seed in 0..10 {
        let ts = synth_tone_silence(&ToneSilenceSpec {
            seed,
            ..ToneSilenceSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let r = remove_silence(&ts.audio, &plan, &VadParams::default()).map_err(|e| e.to_string())?;
        let truth = ts.frame_truth(&plan);
        let agree = truth.iter().zip(&r.speech_mask).filter(|(a, b)| a == b).count();
        worst_acc = worst_acc.min(agree as f64 / truth.len() as f64);
        let expected = mask_to_segments(&truth);
        counts_match &= expected.len() == r.segments.len();
        for (got, want) in r.segments.iter().zip(&expected) {
            worst_boundary = worst_boundary.max(got.0.abs_diff(want.0)).max(got.1.abs_diff(want.1));
        }
        speech += r.speech_frames();
        frames += r.num_frames();
    }
    let ratio = speech as f64 / frames as f64;
    check(
        worst_acc >= 0.9 && counts_match && worst_boundary <= 2 && (ratio - 0.85).abs() <= 0.03,
        format!(
            "min frame accuracy {:.1}%, segment counts match {counts_match}, max boundary error {worst_boundary} frames, \
             compression {:.2}%",
            100.0 * worst_acc,
            100.0 * ratio
        ),
    )
}

struct Scenario {
    root: PathBuf,
    config: PipelineConfig,
}

impl Scenario {
    fn new(root: &Path, spec: &SyntheticSpec) -> Result<Self, String> {
        generate_synthetic_corpus(spec, &root.join("corpus")).map_err(|e| e.to_string())?;
        let mut config = PipelineConfig::default();
        config.corpus.manifest = root.join("corpus/manifest.tsv").display().to_string();
        config.ubm.components = 32;
        config.ubm.max_frames = 100_000;
        config.transforms.max_iters = 20;
        config.vowels.ubm.components = 8;
        config.vowels.hellinger_samples = 10_000;
        Ok(Self {
            root: root.to_path_buf(),
            config,
        })
    }

    fn pipeline(&self, mode: Mode) -> Result<Pipeline, String> {
        let mut cfg = self.config.clone();
        cfg.scoring.mode = mode;
        Pipeline::new(cfg, self.root.join("ws")).map_err(|e| e.to_string())
    }

    fn run(&self, mode: Mode, stages: &[Stage]) -> Result<f64, String> {
        let p = self.pipeline(mode)?;
        for &s in stages {
            p.run(s).map_err(|e| format!("{s}: {e}"))?;
        }
        let r = p.read_report(mode).map_err(|e| e.to_string())?;
        Ok(r.accuracy)
    }

    fn test_utterances(&self) -> Result<usize, String> {
        Ok(self.pipeline(Mode::Baseline)?.read_report(Mode::Baseline).map_err(|e| e.to_string())?.utterances)
    }
}

const BASELINE: [Stage; 7] = [
    Stage::Vad,
    Stage::Features,
    Stage::Transforms,
    Stage::Ubm,
    Stage::Adapt,
    Stage::Classify,
    Stage::Evaluate,
];

fn corpus_spec() -> SyntheticSpec {
    SyntheticSpec {
        utterances_per_accent: 480,
        min_frames: 100,
        max_frames: 200,
        seed: 7,
        ..SyntheticSpec::default()
    }
}

fn vowel_spec() -> SyntheticSpec {
    SyntheticSpec {
        accent_vowels: vec![Vowel::Ah, Vowel::Ih, Vowel::Iy],
        style: AccentStyle::Substitute,
        ..corpus_spec()
    }
}

fn end_to_end(tmp: &Path) -> Outcome {
    let t = Instant::now();
    let sep = Scenario::new(&tmp.join("sep"), &corpus_spec())?;
    let sep_acc = sep.run(Mode::Baseline, &BASELINE)?;
    let n = sep.test_utterances()?;
    let same = Scenario::new(
        &tmp.join("same"),
        &SyntheticSpec {
            separation: 0.0,
            ..corpus_spec()
        },
    )?;
    let same_acc = same.run(Mode::Baseline, &BASELINE)?;
    let secs = t.elapsed().as_secs_f64();
    check(
        n >= 500 && sep_acc >= 0.95 && (same_acc - 1.0 / 7.0).abs() <= 0.05 && secs < 300.0,
        format!(
            "{n} test utterances; separated {:.1}%, identical {:.1}% (chance 14.3%), {secs:.0} s",
            100.0 * sep_acc,
            100.0 * same_acc
        ),
    )
}

fn vowel_improvement(tmp: &Path) -> Outcome {
    let s = Scenario::new(&tmp.join("vowel"), &vowel_spec())?;
    let base = s.run(Mode::Baseline, &BASELINE)?;
    let vowel = s.run(
        Mode::Vowel,
        &[Stage::VowelModels, Stage::Weights, Stage::Calibrate, Stage::Classify, Stage::Evaluate],
    )?;
    let n = s.test_utterances()?;
    check(
        n >= 500 && vowel - base >= 0.10,
        format!(
            "{n} test utterances; baseline {:.1}%, vowel-weighted {:.1}% ({:+.1} points)",
            100.0 * base,
            100.0 * vowel,
            100.0 * (vowel - base)
        ),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(tmp: &Path) -> Outcome {
    let spec = SyntheticSpec {
        num_accents: 3,
        utterances_per_accent: 14,
        min_frames: 80,
        max_frames: 120,
        seed: 11,
        ..vowel_spec()
    };
    let dir = tmp.join("det");
    generate_synthetic_corpus(&spec, &dir.join("corpus")).map_err(|e| e.to_string())?;
    generate_audio_corpus(
        &spec.accent_labels(),
        8,
        &ToneSilenceSpec {
            duration_sec: 2.0,
            seed: 11,
            ..ToneSilenceSpec::default()
        },
        &dir.join("audio"),
    )
    .map_err(|e| e.to_string())?;
    let mut files = 0;
    let mut differing = Vec::new();
    for (corpus, mode) in [("corpus", Mode::Vowel), ("audio", Mode::Baseline)] {
        let mut cfg = PipelineConfig::default();
        cfg.corpus.manifest = dir.join(corpus).join("manifest.tsv").display().to_string();
        cfg.ubm.components = 8;
        cfg.transforms.max_iters = 10;
        cfg.vowels.ubm.components = 2;
        cfg.vowels.hellinger_samples = 5_000;
        cfg.scoring.mode = mode;
        let mut trees = Vec::new();
        for run in ["a", "b"] {
            let ws = dir.join(format!("{corpus}_{run}"));
            Pipeline::new(cfg.clone(), &ws)
                .and_then(|p| p.run_all())
                .map_err(|e| format!("{corpus}: {e}"))?;
            trees.push(tree(&ws));
        }
        files += trees[0].len();
        if trees[0].keys().ne(trees[1].keys()) {
            differing.push(format!("{corpus}: file sets differ"));
        }
        for (path, bytes) in &trees[0] {
            if trees[1].get(path) != Some(bytes) {
                differing.push(format!("{corpus}/{}", path.display()));
            }
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{files} artifacts byte-identical across reruns")
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn calibration(tmp: &Path) -> Outcome {
    let spec = SyntheticSpec {
        noise_fraction: 0.3,
        ..vowel_spec()
    };
    let s = Scenario::new(&tmp.join("noise"), &spec)?;
    let p = s.pipeline(Mode::Vowel)?;
    for st in [
        Stage::Vad,
        Stage::Features,
        Stage::Transforms,
        Stage::Ubm,
        Stage::Adapt,
        Stage::VowelModels,
        Stage::Weights,
        Stage::Classify,
        Stage::Evaluate,
    ] {
        p.run(st).map_err(|e| format!("{st}: {e}"))?;
    }
    let before = p.read_report(Mode::Vowel).map_err(|e| e.to_string())?.accuracy;
    for st in [Stage::Calibrate, Stage::Classify, Stage::Evaluate] {
        p.run(st).map_err(|e| format!("{st}: {e}"))?;
    }
    let after = p.read_report(Mode::Vowel).map_err(|e| e.to_string())?.accuracy;
    let th = p.read_calibration().map_err(|e| e.to_string())?.threshold;
    check(
        th > spec.noise_score && after - before >= 0.03,
        format!(
            "threshold {th} (noise mode {}); test accuracy {:.1}% at -inf, {:.1}% calibrated",
            spec.noise_score,
            100.0 * before,
            100.0 * after
        ),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("EM monotonicity", Box::new(em_monotonicity)),
        ("MAP limit identities", Box::new(map_limits)),
        ("Hellinger oracle", Box::new(hellinger_oracle)),
        ("transform suite", Box::new(transform_suite)),
        ("feature warping", Box::new(warping)),
        ("VAD", Box::new(vad)),
        ("end-to-end 7-way", Box::new(|| end_to_end(tmp.path()))),
        ("vowel-weighted improvement", Box::new(|| vowel_improvement(tmp.path()))),
        ("determinism", Box::new(|| determinism(tmp.path()))),
        ("confidence calibration", Box::new(|| calibration(tmp.path()))),
    ];
    let mut failed = 0;
    let start = Instant::now();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag}: {name}: {detail} [{}]", i + 1, fmt(t.elapsed()));
    }
    println!("{} of {} criteria passed in {}", criteria.len() - failed, criteria.len(), fmt(start.elapsed()));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn fmt(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}
