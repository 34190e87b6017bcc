//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line that
//! bypasses the test harness's output capture.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use liveness_core::audio_io::Label;
use liveness_core::classifier::{cross_validate, equal_error_rate, train, Model, TrainConfig};
use liveness_core::dsp::lpcc;
use liveness_core::features::{f_sap, m_spec, FeatureConfig};
use liveness_core::geometry::{sigma_sweep, ArrayGeometry, SweepConfig};
use liveness_core::synth::{
    device_presets, synthesize_modulated, synthesize_scene, CorpusConfig, Scene, SourceKind, SourceProfile,
    DEFAULT_SNR_DB,
};
use liveness_validation::{
    coloured_noise, cosine, counterparts, eer_oracle, is_modulated, log_envelope, mean, rms_distance, RenderedCorpus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

fn report(n: u32, title: &str, pass: bool, detail: &str) {
    let line = format!("{} criterion {n} ({title}): {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1-4: geometry, constants and oracles

#[test]
fn criterion_1_sigma_d_geometry() {
    let t0 = Instant::now();
    let table = sigma_sweep(&SweepConfig::default()).unwrap();
    let elapsed = t0.elapsed();
    let n2 = table.summary(2).unwrap().max;
    let ranges: Vec<(usize, f64)> = [4, 6, 8].iter().map(|&n| (n, table.summary(n).unwrap().range)).collect();
    let pass = (n2 - 0.070711).abs() <= 1e-4 && ranges.iter().all(|(_, r)| *r <= 1e-4) && elapsed < Duration::from_secs(5);
    let detail = format!(
        "N=2 max {n2:.6} m; ranges {} m; {:.3} s",
        ranges.iter().map(|(n, r)| format!("N={n} {r:.2e}")).collect::<Vec<_>>().join(", "),
        elapsed.as_secs_f64()
    );
    report(1, "sigma_d geometry", pass, &detail);
}

#[test]
fn criterion_2_bin_constants() {
    let sap = m_spec(5000.0, 4096, 48_000.0);
    let sdp = m_spec(1000.0, 4096, 48_000.0);
    report(2, "retained-bin constants", sap == 426 && sdp == 85, &format!("M_spec {sap} at 5 kHz, {sdp} at 1 kHz"));
}

#[test]
fn criterion_3_lpcc_oracle() {
    let mut worst: f64 = 0.0;
    let mut c0_exact = true;
    for seed in 0..100 {
        let x = coloured_noise(2048, 3000 + seed);
        let c = lpcc(&x, 15).unwrap();
        let o = liveness_validation::lpcc_oracle(&x, 15);
        let num = c.iter().zip(&o).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = o.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(num / den);
        c0_exact &= c[0] == 15f64.ln();
    }
    report(
        3,
        "LPCC oracle",
        worst <= 1e-9 && c0_exact,
        &format!("max relative error {worst:.2e} over 100 signals; c0 = ln 15 exactly: {c0_exact}"),
    );
}

#[test]
fn criterion_4_eer_oracle() {
    let mut worst: f64 = 0.0;
    let mut max_eer: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_auth = rng.random_range(20..150);
        let n_spoof = rng.random_range(20..150);
        // detector-like: authentic scores sit above spoof scores on average
        let shift: f64 = rng.random_range(1.0..3.0);
        let coarse = seed % 3 == 0;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_auth + n_spoof {
            let (label, mu) = if i < n_auth { (Label::Authentic, shift) } else { (Label::Spoof, 0.0) };
            let z: f64 = mu + rng.sample::<f64, _>(StandardNormal);
            let mut s = 1.0 / (1.0 + (-z).exp());
            if coarse {
                s = (s * 20.0).round() / 20.0;
            }
            scores.push(s);
            labels.push(label);
        }
        let e = equal_error_rate(&scores, &labels).unwrap().eer;
        worst = worst.max((e - eer_oracle(&scores, &labels)).abs());
        max_eer = max_eer.max(e);
    }
    report(
        4,
        "EER oracle",
        worst <= 1e-9 && max_eer <= 0.5,
        &format!("max |EER - brute force| {worst:.2e} over 100 score sets; max EER {max_eer:.4}"),
    );
}

// ---------------------------------------------------------------------------
// 5: fingerprint stability

fn scene(kind: SourceKind, distance: f64, rotation: f64) -> Scene {
    let mut s = Scene::new(ArrayGeometry::new(6, 0.05, rotation).unwrap(), distance, kind);
    s.snr_db = Some(DEFAULT_SNR_DB);
    s
}

#[test]
fn criterion_5_fingerprint_stability() {
    let cfg = FeatureConfig::default();
    let presets = device_presets();
    let rows: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
            let profile = SourceProfile::random_voice(&mut rng);
            let rot = rng.random_range(0.0..std::f64::consts::TAU);
            let preset = &presets[i as usize % presets.len()];
            let device_profile = profile.clone().with_device(preset.filter);
            let sap = |kind: SourceKind, p: &SourceProfile, l: f64| {
                f_sap(&synthesize_scene(&scene(kind, l, rot), p, 1.0, i).unwrap(), &cfg).unwrap()
            };
            let h06 = sap(SourceKind::Human, &profile, 0.6);
            let h12 = sap(SourceKind::Human, &profile, 1.2);
            let d06 = sap(SourceKind::Device(preset.id.clone()), &device_profile, 0.6);
            let d12 = sap(SourceKind::Device(preset.id.clone()), &device_profile, 1.2);
            (cosine(&h06, &h12), 0.5 * (cosine(&h06, &d06) + cosine(&h12, &d12)))
        })
        .collect();
    let same = mean(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let cross = mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    report(
        5,
        "array-fingerprint stability",
        same >= 0.95 && same - cross >= 0.1,
        &format!("same source across L {same:.4} (need >= 0.95); human vs device at equal L {cross:.4}, gap {:.4} (need >= 0.1)", same - cross),
    );
}

// ---------------------------------------------------------------------------
// 6-7: end-to-end detection on a shared synthetic corpus

const DISTANCES: [f64; 4] = [0.6, 1.2, 1.8, 2.4];

struct Shared {
    corpus: RenderedCorpus,
    render_time: Duration,
    model: Model,
}

fn shared() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let mut cfg = CorpusConfig::new(400, 400, DISTANCES.to_vec());
        cfg.counts.modulated = 120;
        cfg.seed = 7;
        let t0 = Instant::now();
        let corpus = RenderedCorpus::render(&cfg, &FeatureConfig::default()).unwrap();
        let render_time = t0.elapsed();
        let table = corpus.table(FeatureConfig::default().column_names(), |j| !is_modulated(j));
        let (model, _) = train(&table, &TrainConfig::default(), &FeatureConfig::default().config_hash()).unwrap();
        Shared {
            corpus,
            render_time,
            model,
        }
    })
}

#[test]
fn criterion_6_end_to_end_detection() {
    let s = shared();
    let t0 = Instant::now();
    let columns = FeatureConfig::default().column_names();
    let table = s.corpus.table(columns.clone(), |j| !is_modulated(j));
    let tc = TrainConfig::default();
    let cv = cross_validate(&table, &tc, "synthetic", 2).unwrap();
    let accuracy = cv.pooled.accuracy;
    let eer = cv.pooled.eer.unwrap();

    let mut drops = BTreeMap::new();
    for l in DISTANCES {
        let train_set = s.corpus.table(columns.clone(), |j| !is_modulated(j) && j.scene.source_distance_m == l);
        let test_set = s.corpus.table(columns.clone(), |j| !is_modulated(j) && j.scene.source_distance_m != l);
        let drop = train(&train_set, &tc, "synthetic")
            .map(|(m, _)| accuracy - m.evaluate(&test_set).unwrap().accuracy)
            .map_err(|e| e.to_string());
        drops.insert(format!("{l}"), drop);
    }
    let worst_drop = drops
        .values()
        .map(|d| d.clone().unwrap_or(f64::INFINITY))
        .fold(f64::NEG_INFINITY, f64::max);
    let runtime = s.render_time + t0.elapsed();
    let pass = accuracy >= 0.95 && eer <= 0.05 && worst_drop <= 0.03 && runtime < Duration::from_secs(600);
    let detail = format!(
        "2-fold CV accuracy {:.2}% (need >= 95%), EER {:.2}% (need <= 5%); cross-distance drop {} (need <= 3 points); {:.0} s",
        100.0 * accuracy,
        100.0 * eer,
        drops
            .iter()
            .map(|(l, d)| match d {
                Ok(d) => format!("{l} m {:.1}", 100.0 * d),
                Err(e) => format!("{l} m [{e}]"),
            })
            .collect::<Vec<_>>()
            .join(", "),
        runtime.as_secs_f64()
    );
    report(6, "end-to-end synthetic detection", pass, &detail);
}

#[test]
fn criterion_7_modulated_attack() {
    let s = shared();
    let modulated: Vec<usize> = (0..s.corpus.jobs.len()).filter(|&i| is_modulated(&s.corpus.jobs[i])).collect();
    let closer = modulated
        .par_iter()
        .filter(|&&i| {
            let job = &s.corpus.jobs[i];
            let m = synthesize_modulated(&job.scene, &job.profile, job.duration_s, job.seed).unwrap();
            let (human, plain) = counterparts(job).unwrap();
            let h = log_envelope(&human);
            rms_distance(&log_envelope(&m), &h) < rms_distance(&log_envelope(&plain), &h)
        })
        .count();
    let mut per_device: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for &i in &modulated {
        let job = &s.corpus.jobs[i];
        let rejected = s.model.score(&s.corpus.features[i]).unwrap() < s.model.threshold;
        let e = per_device.entry(job.scene.source_kind.device_id().unwrap().to_string()).or_default();
        e.0 += usize::from(rejected);
        e.1 += 1;
    }
    let rejected: usize = per_device.values().map(|v| v.0).sum();
    let rate = rejected as f64 / modulated.len() as f64;
    let pass = closer == modulated.len() && rate >= 0.9;
    let detail = format!(
        "envelope closer to authentic on {closer}/{} renders; rejected {:.1}% (need >= 90%): {}",
        modulated.len(),
        100.0 * rate,
        per_device.iter().map(|(d, (r, n))| format!("{d} {r}/{n}")).collect::<Vec<_>>().join(", ")
    );
    report(7, "modulated attack", pass, &detail);
}

// ---------------------------------------------------------------------------
// 8: CLI determinism

fn cli_binary() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let bin = profile_dir.join(format!("liveness{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let profile = match profile_dir.file_name().and_then(|n| n.to_str()) {
            Some("debug") | None => "dev",
            Some(other) => other,
        };
        let status = Command::new(env!("CARGO"))
            .args(["build", "-p", "liveness-cli", "--profile", profile])
            .status()
            .unwrap();
        assert!(status.success(), "could not build the liveness binary");
    }
    bin
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let o = Command::new(cli_binary()).args(args).current_dir(dir).output().unwrap();
    let code = o.status.code();
    assert!(
        code == Some(0) || (args[0] == "detect" && code == Some(1)),
        "{args:?} exited {code:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

/// Every subcommand once, writing into `dir`; returns detect's stdout and exit codes.
fn pipeline(dir: &Path) -> Vec<(String, Option<i32>)> {
    run_in(
        dir,
        &["synth", "--out", "data", "--seed", "7", "--authentic", "40", "--spoof", "40", "--modulated", "3", "--duration", "0.5"],
    );
    run_in(dir, &["sweep", "--out", "sweep.csv", "--seed", "7"]);
    run_in(dir, &["extract", "--manifest", "data/manifest.csv", "--out", "features.csv", "--seed", "7"]);
    run_in(
        dir,
        &["train", "--features", "features.csv", "--out", "model.json", "--seed", "7", "--min-val-accuracy", "0", "--folds", "2"],
    );
    run_in(dir, &["evaluate", "--model", "model.json", "--features", "features.csv", "--out", "eval.json", "--seed", "7"]);
    ["data/authentic_0000.wav", "data/spoof_0000.wav", "data/modulated_0000.wav"]
        .iter()
        .map(|w| {
            let o = run_in(dir, &["detect", "--model", "model.json", "--wav", w, "--seed", "7"]);
            (String::from_utf8_lossy(&o.stdout).into_owned(), o.status.code())
        })
        .collect()
}

#[test]
fn criterion_8_cli_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let detect_a = pipeline(a.path());
    let detect_b = pipeline(b.path());
    let (da, db) = (digests(a.path()), digests(b.path()));
    let differing: Vec<&String> = da.keys().filter(|k| da.get(*k) != db.get(*k)).collect();
    let pass = da.len() == db.len() && differing.is_empty() && detect_a == detect_b;
    let detail = format!(
        "{} output files compared across two runs, {} differ {:?}; detect output identical: {}",
        da.len(),
        differing.len(),
        differing,
        detect_a == detect_b
    );
    report(8, "CLI determinism", pass, &detail);
}

// ---------------------------------------------------------------------------
// 9: f_sap invariances

#[test]
fn criterion_9_sap_invariances() {
    let cfg = FeatureConfig::default();
    let presets = device_presets();
    let mut perm_exact = true;
    let mut worst_gain: f64 = 0.0;
    for i in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i);
        let mut profile = SourceProfile::random_voice(&mut rng);
        let kind = if i % 2 == 0 {
            SourceKind::Human
        } else {
            let p = &presets[i as usize % presets.len()];
            profile = profile.with_device(p.filter);
            SourceKind::Device(p.id.clone())
        };
        let rot = rng.random_range(0.0..std::f64::consts::TAU);
        let audio = synthesize_scene(&scene(kind, DISTANCES[i as usize % 4], rot), &profile, 1.0, i).unwrap();
        let base = f_sap(&audio, &cfg).unwrap();
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..6).collect();
            for k in (1..6).rev() {
                perm.swap(k, rng.random_range(0..=k));
            }
            perm_exact &= f_sap(&audio.permuted(&perm).unwrap(), &cfg).unwrap() == base;
        }
        for g in [0.01, 0.3, 1.9] {
            let scaled = f_sap(&audio.scaled(g), &cfg).unwrap();
            worst_gain = base.iter().zip(&scaled).fold(worst_gain, |w, (a, b)| w.max((a - b).abs()));
        }
    }
    report(
        9,
        "f_sap invariances",
        perm_exact && worst_gain <= 1e-9,
        &format!("50 channel permutations exact: {perm_exact}; max deviation under gain {worst_gain:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// feature-level separability on the shared corpus

#[test]
fn fingerprint_separability_50_plus_50() {
    let s = shared();
    let pick = |label: Label| -> Vec<Vec<f64>> {
        s.corpus
            .jobs
            .iter()
            .zip(&s.corpus.features)
            .filter(|(j, _)| !is_modulated(j) && j.scene.source_kind.label() == label)
            .take(50)
            .map(|(_, f)| f[..40].to_vec())
            .collect()
    };
    let (human, device) = (pick(Label::Authentic), pick(Label::Spoof));
    let mut within = Vec::new();
    for i in 0..human.len() {
        for j in i + 1..human.len() {
            within.push(cosine(&human[i], &human[j]));
        }
    }
    let across: Vec<f64> = human.iter().flat_map(|h| device.iter().map(move |d| cosine(h, d))).collect();
    let (w, c) = (mean(&within), mean(&across));
    assert!(w - c >= 0.1, "human/human {w:.4} vs human/device {c:.4}, gap {:.4} (need >= 0.1)", w - c);
}
