mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use liveness_core::audio_io::{load_manifest, load_wav, write_atomic, Label};
use liveness_core::classifier::{cross_validate, load_model, save_model, train, EvaluationReport, TrainConfig};
use liveness_core::features::{extract, FeatureConfig, FeatureTable};
use liveness_core::geometry::{sigma_sweep, SweepConfig};
use liveness_core::synth::{generate_corpus, CorpusConfig, MANIFEST_FILE};

use config::{file_digest, layered, sidecar, usage, write_json, Stamp, UsageError};

#[derive(Parser)]
#[command(name = "liveness", version, about = "Multichannel voice-liveness toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a labeled synthetic corpus and its manifest.
    Synth(SynthArgs),
    /// Tabulate sigma_d over distance and array rotation.
    Sweep(SweepArgs),
    /// Extract feature vectors for every manifest row.
    Extract(ExtractArgs),
    /// Train a detector on a feature CSV.
    Train(TrainArgs),
    /// Score a labeled feature CSV with a trained model.
    Evaluate(EvaluateArgs),
    /// Classify one recording. Exit 0 authentic, 1 spoof, 2 usage error.
    Detect(DetectArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory for WAVs, manifest.csv and run.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    authentic: Option<usize>,
    #[arg(long)]
    spoof: Option<usize>,
    #[arg(long)]
    modulated: Option<usize>,
    /// Source distances in metres, comma separated.
    #[arg(long, value_delimiter = ',')]
    distances: Option<Vec<f64>>,
    /// Device preset ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    devices: Option<Vec<String>>,
    #[arg(long, conflicts_with = "no_noise")]
    snr_db: Option<f64>,
    /// Render without additive sensor noise.
    #[arg(long)]
    no_noise: bool,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    mics: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    users: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// CSV of every grid point; run.json is written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    mics: Option<Vec<usize>>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    l_min: Option<f64>,
    #[arg(long)]
    l_max: Option<f64>,
    #[arg(long)]
    theta_min: Option<f64>,
    #[arg(long)]
    theta_max: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Default)]
struct FeatureArgs {
    #[arg(long)]
    cutoff_sap: Option<f64>,
    #[arg(long)]
    cutoff_sdp: Option<f64>,
    #[arg(long)]
    grid_rows: Option<usize>,
    #[arg(long)]
    grid_cols: Option<usize>,
    #[arg(long)]
    n_sap: Option<usize>,
    #[arg(long)]
    n_ch: Option<usize>,
    #[arg(long)]
    lpcc_order: Option<usize>,
    #[arg(long)]
    direction_hp: Option<f64>,
}

impl FeatureArgs {
    fn apply(&self, cfg: &mut FeatureConfig) {
        set(&mut cfg.f_sap_cutoff_hz, self.cutoff_sap);
        set(&mut cfg.f_sdp_cutoff_hz, self.cutoff_sdp);
        set(&mut cfg.grid_rows, self.grid_rows);
        set(&mut cfg.grid_cols, self.grid_cols);
        set(&mut cfg.n_sap, self.n_sap);
        set(&mut cfg.n_ch, self.n_ch);
        set(&mut cfg.lpcc_order, self.lpcc_order);
        set(&mut cfg.direction_hp_hz, self.direction_hp);
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Feature CSV; run.json is written beside it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    features: PathBuf,
    /// Model JSON; report and run stamp are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    min_val_accuracy: Option<f64>,
    /// Also run k-fold cross-validation and add it to the report.
    #[arg(long)]
    folds: Option<usize>,
    /// Feature config hash to bind the model to; read from the extract
    /// stamp beside the features file when omitted.
    #[arg(long)]
    config_hash: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Report JSON; the ROC CSV and run stamp are written beside it.
    #[arg(long, default_value = "evaluation.json")]
    out: PathBuf,
    /// Decision threshold instead of the model's own.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn core_usage(e: liveness_core::Error) -> anyhow::Error {
    usage(e.to_string())
}

// ---------------------------------------------------------------------------
// synth

fn default_corpus() -> CorpusConfig {
    CorpusConfig::new(100, 100, vec![0.6, 1.2, 1.8, 2.4])
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode> {
    let mut cfg = layered(&default_corpus(), a.common.config.as_deref())?;
    set(&mut cfg.seed, a.common.seed);
    set(&mut cfg.counts.authentic, a.authentic);
    set(&mut cfg.counts.spoof, a.spoof);
    set(&mut cfg.counts.modulated, a.modulated);
    set(&mut cfg.distances_m, a.distances);
    set(&mut cfg.device_presets, a.devices);
    if a.no_noise {
        cfg.snr_db = None;
    } else if a.snr_db.is_some() {
        cfg.snr_db = a.snr_db;
    }
    set(&mut cfg.duration_s, a.duration);
    set(&mut cfg.n_mics, a.mics);
    set(&mut cfg.radius_m, a.radius);
    set(&mut cfg.n_users, a.users);
    cfg.validate().map_err(core_usage)?;

    let manifest = generate_corpus(&cfg, &a.out).with_context(|| format!("cannot render corpus into {}", a.out.display()))?;
    let manifest_path = a.out.join(MANIFEST_FILE);
    let digest = file_digest(&manifest_path)?;
    Stamp::new("synth", cfg.seed, &cfg).write(&a.out.join("run.json"))?;
    println!(
        "wrote {} renders ({} authentic, {} spoof) to {}",
        manifest.len(),
        manifest.count(Label::Authentic),
        manifest.count(Label::Spoof),
        a.out.display()
    );
    println!("manifest {} sha256 {digest}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sweep

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut cfg = layered(&SweepConfig::default(), a.common.config.as_deref())?;
    set(&mut cfg.n_mics, a.mics);
    set(&mut cfg.radius_m, a.radius);
    set(&mut cfg.distance_range_m.0, a.l_min);
    set(&mut cfg.distance_range_m.1, a.l_max);
    set(&mut cfg.theta_range_deg.0, a.theta_min);
    set(&mut cfg.theta_range_deg.1, a.theta_max);
    set(&mut cfg.steps, a.steps);
    let table = sigma_sweep(&cfg).map_err(core_usage)?;

    write_atomic(&a.out, table.to_csv().as_bytes()).with_context(|| format!("cannot write {}", a.out.display()))?;
    Stamp::new("sweep", a.common.seed.unwrap_or(0), &cfg).write(&sidecar(&a.out, "run.json"))?;
    println!("{:>4} {:>12} {:>12} {:>12} {:>12}", "N", "min_m", "mean_m", "max_m", "range_m");
    for s in &table.summaries {
        println!(
            "{:>4} {:>12.6} {:>12.6} {:>12.6} {:>12.3e}",
            s.n_mics, s.min, s.mean, s.max, s.range
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// extract

fn feature_config(path: Option<&Path>, flags: &FeatureArgs) -> Result<FeatureConfig> {
    let mut cfg = layered(&FeatureConfig::default(), path)?;
    flags.apply(&mut cfg);
    cfg.validate().map_err(core_usage)?;
    Ok(cfg)
}

fn cmd_extract(a: ExtractArgs) -> Result<ExitCode> {
    let cfg = feature_config(a.common.config.as_deref(), &a.features)?;
    let manifest = load_manifest(&a.manifest).with_context(|| format!("cannot load manifest {}", a.manifest.display()))?;
    if manifest.is_empty() {
        return Err(usage(format!("manifest {} has no rows", a.manifest.display())));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build()?;

    let rows: Vec<Result<Vec<f64>>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let path = manifest.resolve(entry);
                let audio = load_wav(&path)?;
                Ok(extract(&audio, &cfg)?.to_vec())
            })
            .collect()
    });
    let mut table = FeatureTable::new(cfg.column_names());
    for (entry, row) in manifest.entries.iter().zip(rows) {
        let row = row.with_context(|| format!("failed on {}", manifest.resolve(entry).display()))?;
        table.push(entry.path.clone(), entry.label, row);
    }

    write_atomic(&a.out, table.to_csv().as_bytes()).with_context(|| format!("cannot write {}", a.out.display()))?;
    let mut stamp = Stamp::new("extract", a.common.seed.unwrap_or(0), &cfg).input("manifest", &a.manifest)?;
    stamp.config_hash = Some(cfg.config_hash());
    stamp.write(&sidecar(&a.out, "run.json"))?;
    println!(
        "extracted {} rows x {} features to {} (config_hash {})",
        table.len(),
        cfg.feature_len(),
        a.out.display(),
        cfg.config_hash()
    );
    Ok(ExitCode::SUCCESS)
}

/// Config hash recorded by `extract` beside a features file, if any.
fn stamped_config_hash(features: &Path) -> Result<Option<String>> {
    let path = sidecar(features, "run.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{} is not valid JSON: {e}", path.display())))?;
    Ok(value.get("config_hash").and_then(|h| h.as_str()).map(str::to_string))
}

fn load_features(path: &Path) -> Result<FeatureTable> {
    let file = std::fs::File::open(path).map_err(|e| usage(format!("cannot open features {}: {e}", path.display())))?;
    FeatureTable::from_csv(std::io::BufReader::new(file)).with_context(|| format!("cannot parse {}", path.display()))
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRun {
    train: TrainConfig,
    folds: Option<usize>,
    config_hash: Option<String>,
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    config_hash: &'a str,
    n_rows: usize,
    n_features: usize,
    validation: &'a liveness_core::classifier::TrainReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_validation: Option<liveness_core::classifier::CrossValidationReport>,
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut run = layered(&TrainRun::default(), a.common.config.as_deref())?;
    set(&mut run.train.seed, a.common.seed);
    set(&mut run.train.val_fraction, a.val_fraction);
    set(&mut run.train.learning_rate, a.learning_rate);
    set(&mut run.train.batch_size, a.batch_size);
    set(&mut run.train.max_epochs, a.max_epochs);
    set(&mut run.train.patience, a.patience);
    set(&mut run.train.min_val_accuracy, a.min_val_accuracy);
    if a.folds.is_some() {
        run.folds = a.folds;
    }
    if a.config_hash.is_some() {
        run.config_hash = a.config_hash;
    }
    if run.config_hash.is_none() {
        run.config_hash = stamped_config_hash(&a.features)?;
    }
    let config_hash = run.config_hash.clone().unwrap_or_else(|| FeatureConfig::default().config_hash());
    run.config_hash = Some(config_hash.clone());
    run.train.validate().map_err(core_usage)?;

    let table = load_features(&a.features)?;
    let (model, report) = train(&table, &run.train, &config_hash)?;
    let cv = match run.folds {
        Some(k) => Some(cross_validate(&table, &run.train, &config_hash, k)?),
        None => None,
    };

    save_model(&model, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let output = TrainOutput {
        config_hash: &config_hash,
        n_rows: table.len(),
        n_features: table.columns.len(),
        validation: &report,
        cross_validation: cv,
    };
    write_json(&sidecar(&a.out, "report.json"), &output)?;
    Stamp::new("train", run.train.seed, &run)
        .input("features", &a.features)?
        .write(&sidecar(&a.out, "run.json"))?;

    println!(
        "trained on {} rows ({} val): val_accuracy {:.4} val_eer {:.4} threshold {:.4} after {} epochs",
        report.n_train, report.n_val, report.val_accuracy, report.val_eer, report.threshold, report.epochs_run
    );
    if let Some(cv) = &output.cross_validation {
        println!(
            "{}-fold cross-validation: accuracy {:.4} eer {}",
            cv.folds.len(),
            cv.pooled.accuracy,
            cv.pooled.eer.map(|e| format!("{e:.4}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRun {
    threshold: Option<f64>,
}

fn roc_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for p in &report.roc {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.far, p.frr);
    }
    out
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let mut run = layered(&EvaluateRun::default(), a.common.config.as_deref())?;
    if a.threshold.is_some() {
        run.threshold = a.threshold;
    }
    let mut model = load_model(&a.model).with_context(|| format!("cannot load model {}", a.model.display()))?;
    if let Some(t) = run.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(usage(format!("threshold must lie in (0, 1), got {t}")));
        }
        model.threshold = t;
    }
    if let Some(hash) = stamped_config_hash(&a.features)? {
        if hash != model.config_hash {
            return Err(usage(format!(
                "{} was extracted with config {hash} but the model expects {}",
                a.features.display(),
                model.config_hash
            )));
        }
    }
    let table = load_features(&a.features)?;
    let report = model.evaluate(&table)?;

    write_json(&a.out, &report)?;
    let roc_path = sidecar(&a.out, "roc.csv");
    write_atomic(&roc_path, roc_csv(&report).as_bytes()).with_context(|| format!("cannot write {}", roc_path.display()))?;
    Stamp::new("evaluate", a.common.seed.unwrap_or(0), &run)
        .input("features", &a.features)?
        .input("model", &a.model)?
        .write(&sidecar(&a.out, "run.json"))?;

    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "n/a".into());
    println!(
        "{} samples: accuracy {:.2}% far {} frr {} trr {} eer {}",
        report.n_samples,
        100.0 * report.accuracy,
        pct(report.far),
        pct(report.frr),
        pct(report.trr),
        pct(report.eer)
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// detect

fn cmd_detect(a: DetectArgs) -> Result<ExitCode> {
    let cfg = feature_config(a.common.config.as_deref(), &a.features)?;
    let model = load_model(&a.model).with_context(|| format!("cannot load model {}", a.model.display()))?;
    let audio = load_wav(&a.wav)?;
    let features = extract(&audio, &cfg).with_context(|| format!("failed on {}", a.wav.display()))?;
    let prediction = model.predict(&features.to_vec(), &cfg.config_hash())?;
    println!("label={} score={:.4}", prediction.label.as_str(), prediction.score);
    Ok(match prediction.label {
        Label::Authentic => ExitCode::SUCCESS,
        Label::Spoof => ExitCode::from(1),
    })
}

// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Detect(a) => cmd_detect(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let is_detect = matches!(cli.command, Command::Detect(_));
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // detect reserves 1 for "spoof", so every failure there is a 2
            if is_detect || e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

