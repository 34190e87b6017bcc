//! Direction detection and the three feature blocks.
//!
//! * `f_sap`: spread across channels of spectrogram grid energies below
//!   5 kHz, averaged over time, smoothed, min-max normalized, resampled.
//! * `f_sdp`: mean low-band (< 1 kHz) channel strength over time chunks plus
//!   mean/std across channels of the chunk indices where each channel's
//!   cumulative strength crosses fixed thresholds.
//! * `f_lpc`: LPCC of the mic nearest the source and of the opposite mic.
//!
//! Channel reductions sort their inputs before summing so that every
//! across-channel statistic is exactly invariant to channel order.

use std::fmt::Write as _;
use std::io::Read;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio_io::{Label, MultiChannelAudio};
use crate::dsp::{highpass, lpcc, moving_average, resample_linear, Spectrogram, Stft, StftConfig};
use crate::error::{ensure_arg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub f_sap_cutoff_hz: f64,
    pub f_sdp_cutoff_hz: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub n_sap: usize,
    pub n_ch: usize,
    pub sdp_thresholds: Vec<f64>,
    pub lpcc_order: usize,
    pub stft: StftConfig,
    pub direction_hp_hz: f64,
    pub smoothing_width: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            f_sap_cutoff_hz: 5000.0,
            f_sdp_cutoff_hz: 1000.0,
            grid_rows: 100,
            grid_cols: 20,
            n_sap: 40,
            n_ch: 20,
            sdp_thresholds: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            lpcc_order: 15,
            stft: StftConfig::default(),
            direction_hp_hz: 100.0,
            smoothing_width: 5,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        ensure_arg!(
            self.grid_rows >= 2 && self.grid_cols >= 2 && self.n_sap >= 2 && self.n_ch >= 2,
            "grid_rows, grid_cols, n_sap and n_ch must all be >= 2"
        );
        ensure_arg!(
            self.f_sap_cutoff_hz > 0.0 && self.f_sdp_cutoff_hz > 0.0,
            "feature cutoffs must be positive"
        );
        ensure_arg!(!self.sdp_thresholds.is_empty(), "need at least one distribution threshold");
        ensure_arg!(
            self.sdp_thresholds.iter().all(|t| *t > 0.0 && *t < 1.0)
                && self.sdp_thresholds.windows(2).all(|w| w[0] < w[1]),
            "distribution thresholds must be strictly increasing within (0, 1)"
        );
        ensure_arg!(self.lpcc_order >= 1, "lpcc order must be >= 1");
        ensure_arg!(
            self.smoothing_width % 2 == 1 && self.smoothing_width <= self.grid_rows,
            "smoothing width must be odd and at most grid_rows"
        );
        ensure_arg!(self.direction_hp_hz > 0.0, "direction high-pass cutoff must be positive");
        Ok(())
    }

    /// Checks the cutoffs against a concrete sample rate.
    pub fn validate_for_rate(&self, sample_rate_hz: f64) -> Result<()> {
        self.validate()?;
        let nyquist = sample_rate_hz / 2.0;
        ensure_arg!(
            self.f_sap_cutoff_hz < nyquist && self.f_sdp_cutoff_hz < nyquist && self.direction_hp_hz < nyquist,
            "cutoffs must lie below the Nyquist frequency {nyquist} Hz"
        );
        Ok(())
    }

    pub fn sdp_len(&self) -> usize {
        self.n_ch + 2 * self.sdp_thresholds.len()
    }

    pub fn lpc_len(&self) -> usize {
        2 * (self.lpcc_order + 1)
    }

    pub fn feature_len(&self) -> usize {
        self.n_sap + self.sdp_len() + self.lpc_len()
    }

    /// Column names: `sap_00.., sdp_00.., lpc_00..`.
    pub fn column_names(&self) -> Vec<String> {
        let block = |prefix: &str, n: usize| (0..n).map(move |i| format!("{prefix}_{i:02}")).collect::<Vec<_>>();
        let mut names = block("sap", self.n_sap);
        names.extend(block("sdp", self.sdp_len()));
        names.extend(block("lpc", self.lpc_len()));
        names
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("feature config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Minimum number of samples for the grid stages.
    pub fn min_samples(&self) -> usize {
        self.stft.min_len_for_frames(self.grid_cols)
    }
}

/// Number of retained spectrogram rows below `cutoff_hz`: `floor(cutoff * n_fft / fs)`.
pub fn m_spec(cutoff_hz: f64, n_fft: usize, sample_rate_hz: f64) -> usize {
    (cutoff_hz * n_fft as f64 / sample_rate_hz).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub f_sap: Vec<f64>,
    pub f_sdp: Vec<f64>,
    pub f_lpc: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.f_sap.len() + self.f_sdp.len() + self.f_lpc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[f_sap, f_sdp, f_lpc]` concatenated.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.f_sap);
        v.extend_from_slice(&self.f_sdp);
        v.extend_from_slice(&self.f_lpc);
        v
    }
}

/// Mean of `values` summed in ascending order.
fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation, order-independent and exactly zero for equal inputs.
fn sorted_std(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n < 2 || values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let mean = sorted_mean(values);
    let mut sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    (sq.iter().sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Chunked energy grid, `rows x cols`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// Sums spectrogram magnitudes over `rows x cols` chunks of the band below `cutoff_hz`.
///
/// Chunk sizes are `floor(M_spec / rows)` bins by `floor(N_s / cols)` frames;
/// leftover bins and frames at the high ends are discarded.
pub fn spectrogram_grid(spec: &Spectrogram, rows: usize, cols: usize, cutoff_hz: f64) -> Result<Grid> {
    ensure_arg!(rows >= 1 && cols >= 1, "grid needs at least one row and column");
    let retained = m_spec(cutoff_hz, spec.n_fft, spec.sample_rate_hz).min(spec.n_bins());
    ensure_arg!(
        retained >= rows,
        "only {retained} spectrogram rows below {cutoff_hz} Hz, need at least {rows}"
    );
    if spec.n_frames() < cols {
        return Err(Error::InvalidArgument(format!(
            "spectrogram has {} frames but the grid needs {cols}; audio must span at least {cols} STFT frames",
            spec.n_frames()
        )));
    }
    let row_size = retained / rows;
    let col_size = spec.n_frames() / cols;
    let mut values = vec![0.0; rows * cols];
    for j in 0..cols {
        for frame in j * col_size..(j + 1) * col_size {
            let bins = spec.frame(frame);
            for i in 0..rows {
                values[i * cols + j] += bins[i * row_size..(i + 1) * row_size].iter().sum::<f64>();
            }
        }
    }
    Ok(Grid { rows, cols, values })
}

fn check_multichannel(audio: &MultiChannelAudio, cfg: &FeatureConfig) -> Result<()> {
    cfg.validate_for_rate(audio.sample_rate_hz() as f64)?;
    ensure_arg!(audio.num_channels() >= 2, "need at least two channels, got {}", audio.num_channels());
    let need = cfg.min_samples();
    ensure_arg!(
        audio.num_frames() >= need,
        "audio has {} samples; at least {need} ({:.3} s) are needed for {} STFT frames",
        audio.num_frames(),
        need as f64 / audio.sample_rate_hz() as f64,
        cfg.grid_cols
    );
    Ok(())
}

fn channel_spectrograms(audio: &MultiChannelAudio, cfg: &FeatureConfig) -> Result<Vec<Spectrogram>> {
    let stft = Stft::new(cfg.stft)?;
    let fs = audio.sample_rate_hz() as f64;
    audio.channels().iter().map(|ch| stft.process(ch, fs)).collect()
}

/// Index (1-based) of the mic with the smallest alignment error
/// `E_i = mean((V_{i-1} - V_i)^2)` after high-passing; mic 0 wraps to mic N.
pub fn detect_direction(audio: &MultiChannelAudio, cfg: &FeatureConfig) -> Result<usize> {
    let n = audio.num_channels();
    ensure_arg!(n >= 2, "direction detection needs at least two channels");
    let fs = audio.sample_rate_hz() as f64;
    let filtered: Vec<Vec<f64>> = audio
        .channels()
        .iter()
        .map(|c| highpass(c, cfg.direction_hp_hz, fs))
        .collect::<Result<_>>()?;
    let errors = alignment_errors(&filtered);
    let mut best = 0;
    for i in 1..n {
        if errors[i] < errors[best] {
            best = i;
        }
    }
    Ok(best + 1)
}

/// `E_i` for every channel, in channel order.
pub fn alignment_errors(channels: &[Vec<f64>]) -> Vec<f64> {
    let n = channels.len();
    (0..n)
        .map(|i| {
            let prev = &channels[(i + n - 1) % n];
            let cur = &channels[i];
            prev.iter().zip(cur).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / cur.len() as f64
        })
        .collect()
}

fn f_sap_from_spectra(spectra: &[Spectrogram], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let grids: Vec<Grid> = spectra
        .iter()
        .map(|s| spectrogram_grid(s, cfg.grid_rows, cfg.grid_cols, cfg.f_sap_cutoff_hz))
        .collect::<Result<_>>()?;
    let mut cell = vec![0.0; grids.len()];
    let time_avg: Vec<f64> = (0..cfg.grid_rows)
        .map(|i| {
            let mut row_sum = 0.0;
            for j in 0..cfg.grid_cols {
                for (c, g) in cell.iter_mut().zip(&grids) {
                    *c = g.get(i, j);
                }
                row_sum += sorted_std(&mut cell);
            }
            row_sum / cfg.grid_cols as f64
        })
        .collect();
    let smoothed = moving_average(&time_avg, cfg.smoothing_width)?;
    let lo = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(vec![0.0; cfg.n_sap]);
    }
    let normalized: Vec<f64> = smoothed.iter().map(|v| (v - lo) / (hi - lo)).collect();
    resample_linear(&normalized, cfg.n_sap)
}

/// Spectrogram array fingerprint (`n_sap` values in [0, 1]).
pub fn f_sap(audio: &MultiChannelAudio, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    check_multichannel(audio, cfg)?;
    f_sap_from_spectra(&channel_spectrograms(audio, cfg)?, cfg)
}

/// Smallest 1-based chunk index whose cumulative share reaches `threshold`.
pub fn split_index(cumulative: &[f64], threshold: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| c >= threshold)
        .map(|p| p + 1)
        .unwrap_or(cumulative.len())
}

/// Builds `[Ch_mean, D_mean, D_std]` from per-channel strength vectors.
pub fn distribution_features(strengths: &[Vec<f64>], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let n = strengths.len();
    ensure_arg!(n >= 1, "need at least one channel strength");
    let len = strengths[0].len();
    let mut column = vec![0.0; n];
    let mean_strength: Vec<f64> = (0..len)
        .map(|i| {
            for (c, s) in column.iter_mut().zip(strengths) {
                *c = s[i];
            }
            sorted_mean(&mut column)
        })
        .collect();
    let mut out = resample_linear(&mean_strength, cfg.n_ch)?;

    let mut indices: Vec<Vec<f64>> = vec![Vec::with_capacity(n); cfg.sdp_thresholds.len()];
    for (k, s) in strengths.iter().enumerate() {
        let total: f64 = s.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Degenerate(format!(
                "channel {} has zero low-band strength; cannot form its cumulative distribution",
                k + 1
            )));
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = s
            .iter()
            .map(|v| {
                acc += v;
                acc / total
            })
            .collect();
        for (t, &thr) in cfg.sdp_thresholds.iter().enumerate() {
            indices[t].push(split_index(&cumulative, thr) as f64);
        }
    }
    out.extend(indices.iter_mut().map(|mu| sorted_mean(mu)));
    out.extend(indices.iter_mut().map(|mu| sorted_std(mu)));
    Ok(out)
}

fn f_sdp_from_spectra(spectra: &[Spectrogram], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let strengths: Vec<Vec<f64>> = spectra
        .iter()
        .map(|s| spectrogram_grid(s, 1, cfg.grid_cols, cfg.f_sdp_cutoff_hz).map(|g| g.values))
        .collect::<Result<_>>()?;
    distribution_features(&strengths, cfg)
}

/// Spectrogram distribution fingerprint (`n_ch + 2 * thresholds` values).
pub fn f_sdp(audio: &MultiChannelAudio, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    check_multichannel(audio, cfg)?;
    f_sdp_from_spectra(&channel_spectrograms(audio, cfg)?, cfg)
}

/// The mic across the array from `mic` (both 1-based).
pub fn opposite_mic(mic: usize, n_mics: usize) -> usize {
    1 + (mic - 1 + n_mics / 2) % n_mics
}

/// LPCC of `closest_mic` followed by LPCC of its opposite mic.
pub fn f_lpc(audio: &MultiChannelAudio, cfg: &FeatureConfig, closest_mic: usize) -> Result<Vec<f64>> {
    let n = audio.num_channels();
    ensure_arg!(n >= 2, "need at least two channels");
    ensure_arg!(
        (1..=n).contains(&closest_mic),
        "mic index {closest_mic} outside 1..={n}"
    );
    let mut out = lpcc(audio.channel(closest_mic - 1), cfg.lpcc_order)?;
    out.extend(lpcc(audio.channel(opposite_mic(closest_mic, n) - 1), cfg.lpcc_order)?);
    Ok(out)
}

/// Full feature vector `[f_sap, f_sdp, f_lpc]`.
pub fn extract(audio: &MultiChannelAudio, cfg: &FeatureConfig) -> Result<FeatureVector> {
    check_multichannel(audio, cfg)?;
    let mic = detect_direction(audio, cfg).map_err(|e| e.in_component("direction detection"))?;
    let spectra = channel_spectrograms(audio, cfg).map_err(|e| e.in_component("stft"))?;
    let f_sap = f_sap_from_spectra(&spectra, cfg).map_err(|e| e.in_component("f_sap"))?;
    let f_sdp = f_sdp_from_spectra(&spectra, cfg).map_err(|e| e.in_component("f_sdp"))?;
    let f_lpc = f_lpc(audio, cfg, mic).map_err(|e| e.in_component("f_lpc"))?;
    let fv = FeatureVector { f_sap, f_sdp, f_lpc };
    debug_assert_eq!(fv.len(), cfg.feature_len());
    if fv.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite feature value".into()));
    }
    Ok(fv)
}

/// Labeled feature rows as read from or written to a feature CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub paths: Vec<PathBuf>,
    pub labels: Vec<Label>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, path: PathBuf, label: Label, row: Vec<f64>) {
        self.paths.push(path);
        self.labels.push(label);
        self.rows.push(row);
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            paths: idx.iter().map(|&i| self.paths[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// `path,label,<columns>` CSV with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,label");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for ((p, l), row) in self.paths.iter().zip(&self.labels).zip(&self.rows) {
            let path = p.to_string_lossy();
            if path.contains([',', '"', '\n']) {
                let _ = write!(out, "\"{}\"", path.replace('"', "\"\""));
            } else {
                out.push_str(&path);
            }
            let _ = write!(out, ",{l}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "path" || &header[1] != "label" {
            return Err(Error::InvalidArgument(
                "feature CSV header must start with path,label and name at least one feature".into(),
            ));
        }
        let mut table = Self::new(header.iter().skip(2).map(str::to_string).collect());
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let label = record[1]
                .parse::<Label>()
                .map_err(|m| Error::InvalidArgument(format!("feature CSV line {line}: {m}")))?;
            let row = record
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("feature CSV line {line}: {e}")))?;
            table.push(PathBuf::from(&record[0]), label, row);
        }
        Ok(table)
    }
}
