//! Liveness classifier: feature standardization, a 102-64-32-16-1 network,
//! training with early stopping and threshold selection at the validation
//! equal-error point.

mod metrics;
mod mlp;
mod persist;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::Label;
use crate::error::{ensure_arg, Error, Result};
use crate::features::FeatureTable;

pub use metrics::{
    eer_from_roc, equal_error_rate, roc_curve, Counts, EerPoint, EvaluationReport, RocPoint,
};
pub use mlp::{bce_with_logit, sigmoid, Adam, Dense, Mlp};
pub use persist::{load_model, model_from_json, model_to_json, save_model, MODEL_VERSION};

pub const HIDDEN_LAYERS: [usize; 3] = [64, 32, 16];
pub const MIN_ROWS_PER_CLASS: usize = 20;

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance features use 1.
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        ensure_arg!(!rows.is_empty(), "cannot fit a scaler to zero rows");
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            var.iter_mut().zip(*r).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2));
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config_hash: String,
    pub scaler: Scaler,
    pub network: Mlp,
    /// Scores at or above this are classified authentic.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub label: Label,
}

impl Model {
    pub fn input_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.scaler.std.len() != self.scaler.mean.len() || self.network.input_dim() != self.scaler.dim() {
            return Err(Error::Model(format!(
                "scaler has {} means and {} deviations but the network expects {} inputs",
                self.scaler.mean.len(),
                self.scaler.std.len(),
                self.network.input_dim()
            )));
        }
        if self.scaler.mean.iter().any(|v| !v.is_finite()) || self.scaler.std.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Model("scaler values must be finite with positive deviations".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Model(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    /// Probability that `features` come from a live speaker.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "feature vector has {} values, model expects {}",
                features.len(),
                self.input_dim()
            )));
        }
        ensure_arg!(features.iter().all(|v| v.is_finite()), "feature vector contains non-finite values");
        Ok(self.network.predict(&self.scaler.transform(features)))
    }

    pub fn classify(&self, score: f64) -> Label {
        if score >= self.threshold {
            Label::Authentic
        } else {
            Label::Spoof
        }
    }

    /// Scores and classifies one vector extracted with the config hashing to `config_hash`.
    pub fn predict(&self, features: &[f64], config_hash: &str) -> Result<Prediction> {
        if config_hash != self.config_hash {
            return Err(Error::Model(format!(
                "feature config hash {config_hash} does not match the model's {}",
                self.config_hash
            )));
        }
        let score = self.score(features)?;
        Ok(Prediction {
            score,
            label: self.classify(score),
        })
    }

    pub fn evaluate(&self, table: &FeatureTable) -> Result<EvaluationReport> {
        let scores = table.rows.iter().map(|r| self.score(r)).collect::<Result<Vec<_>>>()?;
        EvaluationReport::at_threshold(&scores, &table.labels, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub val_fraction: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_val_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            val_fraction: 0.3,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 25,
            min_val_accuracy: 0.7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.val_fraction > 0.0 && self.val_fraction < 1.0,
            "val_fraction must lie in (0, 1), got {}",
            self.val_fraction
        );
        ensure_arg!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive"
        );
        ensure_arg!(self.batch_size >= 1, "batch size must be >= 1");
        ensure_arg!(self.max_epochs >= 1, "max_epochs must be >= 1");
        ensure_arg!(
            (0.0..=1.0).contains(&self.min_val_accuracy),
            "min_val_accuracy must lie in [0, 1]"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_val: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_accuracy: f64,
    pub val_eer: f64,
    pub threshold: f64,
}

fn target(label: Label) -> f64 {
    match label {
        Label::Authentic => 1.0,
        Label::Spoof => 0.0,
    }
}

/// Seeded stratified split into `(train, val)` index lists.
pub fn stratified_split(labels: &[Label], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [Label::Authentic, Label::Spoof] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1.min(idx.len() - 1), idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Seeded stratified assignment of every row to one of `k` folds.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for class in [Label::Authentic, Label::Spoof] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (n, i) in idx.into_iter().enumerate() {
            folds[n % k].push(i);
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

fn check_table(table: &FeatureTable) -> Result<usize> {
    ensure_arg!(!table.rows.is_empty(), "training table is empty");
    let dim = table.rows[0].len();
    ensure_arg!(dim > 0, "feature rows are empty");
    for (i, r) in table.rows.iter().enumerate() {
        ensure_arg!(r.len() == dim, "row {} has {} features, expected {dim}", i + 1, r.len());
        ensure_arg!(r.iter().all(|v| v.is_finite()), "row {} has non-finite features", i + 1);
    }
    ensure_arg!(table.labels.len() == table.rows.len(), "label count mismatch");
    Ok(dim)
}

fn mean_loss(net: &Mlp, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(x, &y)| bce_with_logit(net.logit(x), y)).sum::<f64>() / xs.len() as f64
}

/// Trains a model on `table`; features must come from the config hashing to `config_hash`.
pub fn train(table: &FeatureTable, cfg: &TrainConfig, config_hash: &str) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let dim = check_table(table)?;
    for class in [Label::Authentic, Label::Spoof] {
        let n = table.labels.iter().filter(|l| **l == class).count();
        if n < MIN_ROWS_PER_CLASS {
            return Err(Error::Training(format!(
                "need at least {MIN_ROWS_PER_CLASS} {class} rows, got {n}"
            )));
        }
    }

    let (train_idx, val_idx) = stratified_split(&table.labels, cfg.val_fraction, cfg.seed);
    let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| table.rows[i].as_slice()).collect();
    let scaler = Scaler::fit(&train_rows)?;
    let prep = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            idx.iter().map(|&i| scaler.transform(&table.rows[i])).collect(),
            idx.iter().map(|&i| target(table.labels[i])).collect(),
        )
    };
    let (xt, yt) = prep(&train_idx);
    let (xv, yv) = prep(&val_idx);

    let mut rng = ChaCha8Rng::seed_from_u64(crate::synth::mix_seed(cfg.seed, 1));
    let mut sizes = vec![dim];
    sizes.extend(HIDDEN_LAYERS);
    sizes.push(1);
    let mut net = Mlp::random(&sizes, &mut rng)?;
    let mut adam = Adam::new(cfg.learning_rate, mlp::n_params(&net));

    let mut best = (mean_loss(&net, &xv, &yv), 0usize, net.clone());
    let mut order: Vec<usize> = (0..xt.len()).collect();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| xt[i].as_slice()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| yt[i]).collect();
            let (_, grads) = net.loss_and_grad(&batch, &ys);
            adam.step(&mut net, &grads);
        }
        let val_loss = mean_loss(&net, &xv, &yv);
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("validation loss became non-finite at epoch {epoch}")));
        }
        if val_loss < best.0 {
            best = (val_loss, epoch, net.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, net) = best;

    let val_scores: Vec<f64> = xv.iter().map(|x| net.predict(x)).collect();
    let val_labels: Vec<Label> = val_idx.iter().map(|&i| table.labels[i]).collect();
    let eer = equal_error_rate(&val_scores, &val_labels)?;
    let threshold = eer.threshold.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let val_report = EvaluationReport::at_threshold(&val_scores, &val_labels, threshold)?;
    if val_report.accuracy < cfg.min_val_accuracy {
        return Err(Error::Training(format!(
            "training diverged: validation accuracy {:.3} is below {:.3}",
            val_report.accuracy, cfg.min_val_accuracy
        )));
    }
    let model = Model {
        config_hash: config_hash.to_string(),
        scaler,
        network: net,
        threshold,
    };
    model.validate()?;
    let report = TrainReport {
        n_train: xt.len(),
        n_val: xv.len(),
        epochs_run,
        best_epoch,
        best_val_loss,
        val_accuracy: val_report.accuracy,
        val_eer: eer.eer,
        threshold,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub folds: Vec<EvaluationReport>,
    /// Counts, accuracy and error rates over all held-out rows, each
    /// classified by the model that did not see it; EER over pooled scores.
    pub pooled: EvaluationReport,
}

/// `k`-fold stratified cross-validation with pooled held-out metrics.
pub fn cross_validate(table: &FeatureTable, cfg: &TrainConfig, config_hash: &str, k: usize) -> Result<CrossValidationReport> {
    ensure_arg!(k >= 2, "cross-validation needs at least two folds");
    check_table(table)?;
    let folds = stratified_folds(&table.labels, k, cfg.seed);
    let mut reports = Vec::with_capacity(k);
    let (mut scores, mut labels, mut accepted) = (Vec::new(), Vec::new(), Vec::new());
    for (f, held_out) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let fold_cfg = TrainConfig {
            seed: crate::synth::mix_seed(cfg.seed, 100 + f as u64),
            ..cfg.clone()
        };
        let (model, _) = train(&table.subset(&train_idx), &fold_cfg, config_hash)?;
        let test = table.subset(held_out);
        let report = model.evaluate(&test)?;
        for (r, l) in test.rows.iter().zip(&test.labels) {
            let s = model.score(r)?;
            scores.push(s);
            labels.push(*l);
            accepted.push(s >= model.threshold);
        }
        reports.push(report);
    }
    let pooled = EvaluationReport::from_decisions(&scores, &labels, &accepted, None)?;
    Ok(CrossValidationReport { folds: reports, pooled })
}
