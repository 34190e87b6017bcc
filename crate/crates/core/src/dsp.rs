//! Signal primitives shared by the feature extractors.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub overlap: usize,
    pub n_fft: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 1024,
            overlap: 728,
            n_fft: 4096,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.overlap < self.window_len && self.window_len <= self.n_fft && self.window_len >= 2,
            "stft config needs 0 <= overlap < window_len <= n_fft (got {}/{}/{})",
            self.window_len,
            self.overlap,
            self.n_fft
        );
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.window_len - self.overlap
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for a signal of `len` samples; trailing partial windows are dropped.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop() + 1
        }
    }

    /// Shortest signal yielding `frames` frames.
    pub fn min_len_for_frames(&self, frames: usize) -> usize {
        self.window_len + frames.saturating_sub(1) * self.hop()
    }
}

/// Linear-magnitude spectrogram, `n_bins` rows (frequency) by `n_frames` columns (time).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    n_bins: usize,
    n_frames: usize,
    pub bin_hz: f64,
    pub frame_hop: usize,
    pub n_fft: usize,
    pub sample_rate_hz: f64,
}

impl Spectrogram {
    /// Builds a spectrogram from column vectors (one per frame).
    pub fn from_frames(frames: Vec<Vec<f64>>, n_fft: usize, frame_hop: usize, sample_rate_hz: f64) -> Result<Self> {
        let n_bins = frames.first().map(Vec::len).unwrap_or(0);
        ensure_arg!(n_bins > 0, "spectrogram needs at least one frame");
        ensure_arg!(frames.iter().all(|f| f.len() == n_bins), "ragged spectrogram frames");
        ensure_arg!(
            frames.iter().flatten().all(|v| v.is_finite() && *v >= 0.0),
            "spectrogram magnitudes must be finite and non-negative"
        );
        let n_frames = frames.len();
        Ok(Self {
            data: frames.into_iter().flatten().collect(),
            n_bins,
            n_frames,
            bin_hz: sample_rate_hz / n_fft as f64,
            frame_hop,
            n_fft,
            sample_rate_hz,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.data[frame * self.n_bins + bin]
    }

    /// All bins of one time frame.
    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Symmetric Hann window, `w[n] = 0.5 - 0.5 cos(2 pi n / (L - 1))`.
pub fn hann_symmetric(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos()).collect()
}

/// A reusable STFT: planned FFT plus window.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            window: hann_symmetric(cfg.window_len),
            cfg,
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn process(&self, signal: &[f64], sample_rate_hz: f64) -> Result<Spectrogram> {
        let cfg = &self.cfg;
        ensure_arg!(
            signal.len() >= cfg.window_len,
            "signal of {} samples is shorter than one {}-sample window",
            signal.len(),
            cfg.window_len
        );
        let n_frames = cfg.n_frames(signal.len());
        let n_bins = cfg.n_bins();
        let hop = cfg.hop();
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for j in 0..n_frames {
            let start = j * hop;
            for (slot, (x, w)) in buf
                .iter_mut()
                .zip(signal[start..start + cfg.window_len].iter().zip(&self.window))
            {
                *slot = Complex::new(x * w, 0.0);
            }
            buf[cfg.window_len..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend(buf[..n_bins].iter().map(|c| c.norm()));
        }
        Ok(Spectrogram {
            data,
            n_bins,
            n_frames,
            bin_hz: sample_rate_hz / cfg.n_fft as f64,
            frame_hop: hop,
            n_fft: cfg.n_fft,
            sample_rate_hz,
        })
    }
}

/// One-shot STFT magnitude. Prefer [`Stft`] when transforming many signals.
pub fn stft(signal: &[f64], cfg: StftConfig, sample_rate_hz: f64) -> Result<Spectrogram> {
    Stft::new(cfg)?.process(signal, sample_rate_hz)
}

/// Second-order IIR section, normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Bilinear-transform high-pass section (audio-EQ-cookbook form).
    pub fn highpass(cutoff_hz: f64, q: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate_hz;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cos) / 2.0 / a0;
        Self {
            b: [b0, -2.0 * b0, b0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex<f64> {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z1 = Complex::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Filters `x` in place (transposed direct form II, zero initial state).
    pub fn run(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[0] * y + s2;
            s2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Butterworth high-pass realized as cascaded biquads. `order` must be even.
#[derive(Debug, Clone, PartialEq)]
pub struct HighPass {
    sections: Vec<Biquad>,
    sample_rate_hz: f64,
}

impl HighPass {
    pub fn butterworth(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        ensure_arg!(order >= 2 && order.is_multiple_of(2), "high-pass order must be even and >= 2, got {order}");
        ensure_arg!(
            cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0,
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            sample_rate_hz / 2.0
        );
        let sections = (1..=order / 2)
            .map(|k| {
                let q = 1.0 / (2.0 * ((2 * k - 1) as f64 * PI / (2 * order) as f64).sin());
                Biquad::highpass(cutoff_hz, q, sample_rate_hz)
            })
            .collect();
        Ok(Self {
            sections,
            sample_rate_hz,
        })
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.response(freq_hz, self.sample_rate_hz).norm())
            .product()
    }

    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for s in &self.sections {
            s.run(&mut out);
        }
        out
    }
}

/// Causal 4th-order Butterworth high-pass, single forward pass.
pub fn highpass(signal: &[f64], cutoff_hz: f64, sample_rate_hz: f64) -> Result<Vec<f64>> {
    Ok(HighPass::butterworth(4, cutoff_hz, sample_rate_hz)?.apply(signal))
}

/// Biased autocorrelation `r[k] = sum_n x[n] x[n + k]` for lags `0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|k| x[k..].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Levinson-Durbin solution of the Yule-Walker equations.
///
/// Returns `a[0..=p]` with `a[0] = 1`, the coefficients of the prediction
/// error filter `A(z) = 1 + sum_i a[i] z^-i`.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<Vec<f64>> {
    ensure_arg!(r.len() > order, "need {} autocorrelation lags, got {}", order + 1, r.len());
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(Error::Degenerate("zero autocorrelation (silent signal)".into()));
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    let mut prev = a.clone();
    for i in 1..=order {
        let acc: f64 = (0..i).map(|j| prev[j] * r[i - j]).sum();
        let k = -acc / err;
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) || !err.is_finite() {
            return Err(Error::Degenerate(format!(
                "prediction error vanished at order {i} (singular recursion)"
            )));
        }
        prev.copy_from_slice(&a);
    }
    Ok(a)
}

/// Autocorrelation-method LPC of order `order`.
pub fn lpc(signal: &[f64], order: usize) -> Result<Vec<f64>> {
    ensure_arg!(order >= 1, "lpc order must be >= 1");
    ensure_arg!(
        signal.len() > order,
        "lpc needs more than {order} samples, got {}",
        signal.len()
    );
    levinson_durbin(&autocorrelation(signal, order), order)
}

/// Cepstral coefficients from prediction coefficients `a[0..=p]`.
///
/// `c[0] = ln(p)`; `c[i] = -a[i] - sum_{k=1}^{i-1} (1 - k/i) a[k] c[i-k]`.
pub fn lpc_to_cepstrum(a: &[f64]) -> Vec<f64> {
    let p = a.len() - 1;
    let mut c = vec![0.0; p + 1];
    c[0] = (p as f64).ln();
    for i in 1..=p {
        let inv = 1.0 / i as f64;
        let mut acc = 0.0;
        for k in 1..i {
            acc += (1.0 - k as f64 * inv) * a[k] * c[i - k];
        }
        c[i] = -a[i] - acc;
    }
    c
}

/// LPCC of order `order` (returns `order + 1` values).
pub fn lpcc(signal: &[f64], order: usize) -> Result<Vec<f64>> {
    Ok(lpc_to_cepstrum(&lpc(signal, order)?))
}

/// Centered moving average; windows are truncated at the edges.
pub fn moving_average(v: &[f64], width: usize) -> Result<Vec<f64>> {
    ensure_arg!(width % 2 == 1, "moving-average width must be odd, got {width}");
    ensure_arg!(width <= v.len(), "width {width} exceeds vector length {}", v.len());
    let half = width / 2;
    Ok((0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(v.len() - 1);
            v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// Linear interpolation onto `out_len` evenly spaced positions; endpoints are kept.
pub fn resample_linear(v: &[f64], out_len: usize) -> Result<Vec<f64>> {
    ensure_arg!(v.len() >= 2, "resample input needs >= 2 points, got {}", v.len());
    ensure_arg!(out_len >= 2, "resample output needs >= 2 points, got {out_len}");
    let last = v.len() - 1;
    let step = last as f64 / (out_len - 1) as f64;
    Ok((0..out_len)
        .map(|i| {
            if i == out_len - 1 {
                return v[last];
            }
            let pos = i as f64 * step;
            let j = (pos.floor() as usize).min(last - 1);
            let t = pos - j as f64;
            if t == 0.0 {
                v[j]
            } else {
                v[j] + t * (v[j + 1] - v[j])
            }
        })
        .collect())
}
