//! Synthetic multichannel scenes: authentic speakers, loudspeaker replays and
//! inverse-filtered ("modulated") replays picked up by a circular array.
//!
//! A source is a harmonic series shaped by a piecewise-linear spectral
//! envelope and a slow syllabic amplitude envelope. Loudspeakers add a
//! Butterworth-magnitude high-pass. Every mic receives the source delayed by
//! `d_k / c` and attenuated by `C exp(-alpha_slope f d_k)`; both are applied
//! in the frequency domain so fractional delays are exact.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{save_wav, write_atomic, BitDepth, DatasetManifest, Label, ManifestEntry, MultiChannelAudio};
use crate::error::{ensure_arg, Error, Result};
use crate::geometry::{mic_distances, ArrayGeometry};

pub const SAMPLE_RATE_HZ: u32 = 48_000;
pub const MIN_DURATION_S: f64 = 0.5;
pub const PEAK_LEVEL: f64 = 0.5;
/// Inverse-filter gain limit, +/-20 dB.
pub const INVERSE_CLAMP: f64 = 10.0;

/// Magnitude-only Butterworth high-pass standing in for a loudspeaker's response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceFilter {
    pub corner_hz: f64,
    pub order: u32,
}

impl DeviceFilter {
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let f = freq_hz.abs();
        if f == 0.0 {
            return 0.0;
        }
        1.0 / (1.0 + (self.corner_hz / f).powi(2 * self.order as i32)).sqrt()
    }

    /// Magnitude inverse, limited to +/-20 dB.
    pub fn inverse_gain(&self, freq_hz: f64) -> f64 {
        let m = self.magnitude(freq_hz);
        if m <= 0.0 {
            INVERSE_CLAMP
        } else {
            (1.0 / m).clamp(1.0 / INVERSE_CLAMP, INVERSE_CLAMP)
        }
    }

    fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.corner_hz > 0.0 && self.corner_hz.is_finite() && self.order >= 1,
            "device filter needs a positive corner and order >= 1"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevicePreset {
    pub id: String,
    pub filter: DeviceFilter,
}

/// The three shipped loudspeaker presets: 200 Hz/2nd, 300 Hz/4th and 500 Hz/4th order.
pub fn device_presets() -> Vec<DevicePreset> {
    [(200.0, 2), (300.0, 4), (500.0, 4)]
        .into_iter()
        .map(|(corner_hz, order)| DevicePreset {
            id: format!("hp{}o{}", corner_hz as u32, order),
            filter: DeviceFilter { corner_hz, order },
        })
        .collect()
}

pub fn device_preset(id: &str) -> Option<DevicePreset> {
    device_presets().into_iter().find(|p| p.id == id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "device_id")]
pub enum SourceKind {
    Human,
    Device(String),
    Modulated(String),
}

impl SourceKind {
    pub fn label(&self) -> Label {
        match self {
            SourceKind::Human => Label::Authentic,
            _ => Label::Spoof,
        }
    }

    pub fn device_id(&self) -> Option<&str> {
        match self {
            SourceKind::Human => None,
            SourceKind::Device(id) | SourceKind::Modulated(id) => Some(id),
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceKind::Human => f.write_str("human"),
            SourceKind::Device(id) => write!(f, "device({id})"),
            SourceKind::Modulated(id) => write!(f, "modulated({id})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub geometry: ArrayGeometry,
    pub source_distance_m: f64,
    pub source_kind: SourceKind,
    /// `C` in `C exp(-alpha(f) d)`.
    pub attenuation: f64,
    /// Nepers per metre per Hz; `alpha(f) = absorption_per_hz * f`.
    pub absorption_per_hz: f64,
    pub speed_of_sound: f64,
    pub snr_db: Option<f64>,
}

/// Roughly air absorption at room conditions, about 0.03 dB/m at 4 kHz.
pub const DEFAULT_ABSORPTION_PER_HZ: f64 = 1e-6;
pub const DEFAULT_SNR_DB: f64 = 40.0;

impl Scene {
    pub fn new(geometry: ArrayGeometry, source_distance_m: f64, source_kind: SourceKind) -> Self {
        Self {
            geometry,
            source_distance_m,
            source_kind,
            attenuation: 1.0,
            absorption_per_hz: DEFAULT_ABSORPTION_PER_HZ,
            speed_of_sound: 343.0,
            snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        ensure_arg!(
            self.source_distance_m > self.geometry.radius_m && self.source_distance_m.is_finite(),
            "source distance {} m must exceed the array radius {} m",
            self.source_distance_m,
            self.geometry.radius_m
        );
        ensure_arg!(self.attenuation > 0.0 && self.attenuation.is_finite(), "attenuation C must be positive");
        ensure_arg!(
            self.absorption_per_hz >= 0.0 && self.absorption_per_hz.is_finite(),
            "absorption slope must be non-negative"
        );
        ensure_arg!(self.speed_of_sound > 0.0, "speed of sound must be positive");
        if let Some(snr) = self.snr_db {
            ensure_arg!(snr.is_finite(), "snr_db must be finite");
        }
        Ok(())
    }

    /// Per-mic gain `C exp(-alpha_slope f d)` at `freq_hz`.
    pub fn gain(&self, freq_hz: f64, distance_m: f64) -> f64 {
        self.attenuation * (-self.absorption_per_hz * freq_hz.abs() * distance_m).exp()
    }
}

/// Piecewise-linear gain versus frequency; flat beyond the outer breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEnvelope {
    points: Vec<(f64, f64)>,
}

impl SpectralEnvelope {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        ensure_arg!(!points.is_empty(), "envelope needs at least one breakpoint");
        ensure_arg!(
            points.iter().all(|(f, g)| f.is_finite() && *g > 0.0 && g.is_finite()),
            "envelope gains must be positive and finite"
        );
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { points })
    }

    pub fn flat() -> Self {
        Self { points: vec![(0.0, 1.0)] }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn gain(&self, freq_hz: f64) -> f64 {
        let p = &self.points;
        if freq_hz <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            let ((f0, g0), (f1, g1)) = (w[0], w[1]);
            if freq_hz <= f1 {
                let t = if f1 > f0 { (freq_hz - f0) / (f1 - f0) } else { 1.0 };
                return g0 + t * (g1 - g0);
            }
        }
        p[p.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    pub fundamental_hz: f64,
    pub n_harmonics: usize,
    pub envelope: SpectralEnvelope,
    pub device_filter: Option<DeviceFilter>,
}

/// Highest frequency a harmonic may occupy.
const HARMONIC_CEILING_HZ: f64 = 8_000.0;

impl SourceProfile {
    pub fn voice(fundamental_hz: f64, envelope: SpectralEnvelope) -> Self {
        Self {
            fundamental_hz,
            n_harmonics: (HARMONIC_CEILING_HZ / fundamental_hz).floor().max(1.0) as usize,
            envelope,
            device_filter: None,
        }
    }

    /// A random adult voice: fundamental 85-255 Hz and three formant-like peaks.
    pub fn random_voice<R: Rng>(rng: &mut R) -> Self {
        let f0 = rng.random_range(85.0..255.0);
        Self::voice(f0, random_formant_envelope(rng))
    }

    /// Per-utterance variation of a speaker's base voice.
    pub fn utterance<R: Rng>(&self, rng: &mut R) -> Self {
        let f0 = self.fundamental_hz * rng.random_range(0.92..1.08);
        let stretch = rng.random_range(0.93..1.07);
        let points = self
            .envelope
            .points()
            .iter()
            .map(|&(f, g)| (f * stretch, g * rng.random_range(0.85..1.15)))
            .collect();
        Self {
            envelope: SpectralEnvelope::new(points).expect("positive gains stay positive"),
            device_filter: self.device_filter,
            ..Self::voice(f0, SpectralEnvelope::flat())
        }
    }

    pub fn with_device(mut self, filter: DeviceFilter) -> Self {
        self.device_filter = Some(filter);
        self
    }

    pub fn validate(&self, kind: &SourceKind) -> Result<()> {
        ensure_arg!(
            self.fundamental_hz > 0.0 && self.fundamental_hz.is_finite(),
            "fundamental must be positive"
        );
        ensure_arg!(self.n_harmonics >= 1, "need at least one harmonic");
        match (kind, &self.device_filter) {
            (SourceKind::Human, None) => Ok(()),
            (SourceKind::Human, Some(_)) => Err(Error::InvalidArgument(
                "human sources carry no device filter".into(),
            )),
            (_, None) => Err(Error::InvalidArgument(format!("{kind} source needs a device filter"))),
            (_, Some(f)) => f.validate(),
        }
    }
}

fn random_formant_envelope<R: Rng>(rng: &mut R) -> SpectralEnvelope {
    let f1 = rng.random_range(300.0..800.0);
    let f2 = rng.random_range(900.0..2300.0);
    let f3 = rng.random_range(2400.0..3400.0);
    let g0 = rng.random_range(0.4..0.8);
    let g2 = rng.random_range(0.3..0.7);
    let g3 = rng.random_range(0.1..0.35);
    let v1 = g2 * rng.random_range(0.3..0.6);
    let v2 = g3 * rng.random_range(0.3..0.6);
    let tail = rng.random_range(0.005..0.03);
    SpectralEnvelope::new(vec![
        (0.0, g0),
        (f1, 1.0),
        (0.5 * (f1 + f2), v1),
        (f2, g2),
        (0.5 * (f2 + f3), v2),
        (f3, g3),
        (7_000.0, tail),
    ])
    .expect("generated gains are positive")
}

/// Source waveform: harmonics with random phases under a 2-8 Hz syllabic envelope.
fn source_waveform(profile: &SourceProfile, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = SAMPLE_RATE_HZ as f64;
    let nyquist_guard = 0.45 * fs;
    let harmonics: Vec<(f64, f64, f64)> = (1..=profile.n_harmonics)
        .map(|m| {
            let f = m as f64 * profile.fundamental_hz;
            (f, profile.envelope.gain(f), rng.random_range(0.0..2.0 * PI))
        })
        .filter(|&(f, _, _)| f < nyquist_guard)
        .collect();
    let syllable_hz = rng.random_range(2.0..8.0);
    let syllable_phase = rng.random_range(0.0..2.0 * PI);
    let floor = rng.random_range(0.1..0.3);
    let fade = (0.01 * fs) as usize;
    (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            let tone: f64 = harmonics
                .iter()
                .map(|&(f, g, ph)| g * (2.0 * PI * f * t + ph).sin())
                .sum();
            let syllable = floor + (1.0 - floor) * (0.5 - 0.5 * (2.0 * PI * syllable_hz * t + syllable_phase).cos());
            let edge = n.min(len - 1 - n);
            let taper = if edge < fade { 0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos() } else { 1.0 };
            tone * syllable * taper
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SourceFiltering {
    None,
    Device,
    InverseThenDevice,
}

/// Source generation and propagation, before noise and normalization.
fn propagate(
    scene: &Scene,
    profile: &SourceProfile,
    duration_s: f64,
    seed: u64,
    filtering: SourceFiltering,
) -> Result<(Vec<Vec<f64>>, ChaCha8Rng)> {
    scene.validate()?;
    profile.validate(&scene.source_kind)?;
    ensure_arg!(
        duration_s >= MIN_DURATION_S && duration_s.is_finite(),
        "duration must be at least {MIN_DURATION_S} s, got {duration_s}"
    );
    let fs = SAMPLE_RATE_HZ as f64;
    let n_out = (duration_s * fs).round() as usize;
    let distances = mic_distances(&scene.geometry, scene.source_distance_m)?;
    let delays: Vec<f64> = distances.iter().map(|d| d / scene.speed_of_sound * fs).collect();
    let max_delay = delays.iter().cloned().fold(0.0, f64::max);
    let lead = max_delay.ceil() as usize + 1024;
    let total = n_out + lead;
    let n_fft = (total + 2048).next_power_of_two();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = source_waveform(profile, total, &mut rng);

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n_fft);
    let inverse = planner.plan_fft_inverse(n_fft);
    let mut spectrum: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    spectrum.resize(n_fft, Complex::new(0.0, 0.0));
    forward.process(&mut spectrum);

    let signed_freq = |b: usize| -> f64 {
        if b <= n_fft / 2 {
            b as f64 * fs / n_fft as f64
        } else {
            (b as f64 - n_fft as f64) * fs / n_fft as f64
        }
    };
    let device = profile.device_filter;
    let source_gain = |f: f64| -> f64 {
        match (filtering, device) {
            (SourceFiltering::None, _) | (_, None) => 1.0,
            (SourceFiltering::Device, Some(d)) => d.magnitude(f),
            (SourceFiltering::InverseThenDevice, Some(d)) => d.inverse_gain(f) * d.magnitude(f),
        }
    };
    for (b, c) in spectrum.iter_mut().enumerate() {
        *c *= source_gain(signed_freq(b));
    }

    let scale = 1.0 / n_fft as f64;
    let channels: Vec<Vec<f64>> = distances
        .iter()
        .zip(&delays)
        .map(|(&d, &delay)| {
            let mut buf: Vec<Complex<f64>> = spectrum
                .iter()
                .enumerate()
                .map(|(b, &c)| {
                    if b == n_fft / 2 {
                        return Complex::new(0.0, 0.0);
                    }
                    let f = signed_freq(b);
                    let phase = -2.0 * PI * f * delay / fs;
                    c * Complex::from_polar(scene.gain(f, d), phase)
                })
                .collect();
            inverse.process(&mut buf);
            buf[lead..lead + n_out].iter().map(|c| c.re * scale).collect()
        })
        .collect();
    Ok((channels, rng))
}

fn render(
    scene: &Scene,
    profile: &SourceProfile,
    duration_s: f64,
    seed: u64,
    filtering: SourceFiltering,
) -> Result<MultiChannelAudio> {
    let (mut channels, mut rng) = propagate(scene, profile, duration_s, seed, filtering)?;
    let n_out = channels[0].len();
    if let Some(snr_db) = scene.snr_db {
        let power = channels.iter().flatten().map(|v| v * v).sum::<f64>() / (n_out * channels.len()) as f64;
        let noise_rms = power.sqrt() / 10f64.powf(snr_db / 20.0);
        for ch in &mut channels {
            for v in ch.iter_mut() {
                *v += noise_rms * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let peak = channels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) {
        return Err(Error::Degenerate("rendered scene is silent".into()));
    }
    let norm = PEAK_LEVEL / peak;
    for v in channels.iter_mut().flatten() {
        *v *= norm;
    }
    let audio = MultiChannelAudio::from_channels(channels, SAMPLE_RATE_HZ)?;
    assert!(audio.peak() <= 1.0, "peak-normalized render exceeds full scale");
    Ok(audio)
}

/// Renders a human or plain-replay scene.
pub fn synthesize_scene(scene: &Scene, profile: &SourceProfile, duration_s: f64, seed: u64) -> Result<MultiChannelAudio> {
    let filtering = match scene.source_kind {
        SourceKind::Human => SourceFiltering::None,
        SourceKind::Device(_) => SourceFiltering::Device,
        SourceKind::Modulated(_) => SourceFiltering::InverseThenDevice,
    };
    render(scene, profile, duration_s, seed, filtering)
}

/// Renders a replay whose source was pre-compensated with the clamped inverse of the device filter.
pub fn synthesize_modulated(scene: &Scene, profile: &SourceProfile, duration_s: f64, seed: u64) -> Result<MultiChannelAudio> {
    ensure_arg!(
        matches!(scene.source_kind, SourceKind::Modulated(_)),
        "modulated synthesis needs a modulated source, got {}",
        scene.source_kind
    );
    render(scene, profile, duration_s, seed, SourceFiltering::InverseThenDevice)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub authentic: usize,
    pub spoof: usize,
    #[serde(default)]
    pub modulated: usize,
}

fn default_mics() -> usize {
    6
}
fn default_radius() -> f64 {
    0.05
}
fn default_users() -> usize {
    10
}
fn default_absorption() -> f64 {
    DEFAULT_ABSORPTION_PER_HZ
}
fn default_bit_depth() -> BitDepth {
    BitDepth::Int16
}

/// Corpus description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub counts: ClassCounts,
    pub distances_m: Vec<f64>,
    pub device_presets: Vec<String>,
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_mics")]
    pub n_mics: usize,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    #[serde(default = "default_users")]
    pub n_users: usize,
    #[serde(default = "default_absorption")]
    pub absorption_per_hz: f64,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: BitDepth,
}

impl CorpusConfig {
    pub fn new(authentic: usize, spoof: usize, distances_m: Vec<f64>) -> Self {
        Self {
            counts: ClassCounts {
                authentic,
                spoof,
                modulated: 0,
            },
            distances_m,
            device_presets: device_presets().into_iter().map(|p| p.id).collect(),
            snr_db: Some(DEFAULT_SNR_DB),
            seed: 0,
            duration_s: 1.0,
            n_mics: default_mics(),
            radius_m: default_radius(),
            n_users: default_users(),
            absorption_per_hz: DEFAULT_ABSORPTION_PER_HZ,
            bit_depth: BitDepth::Int16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(!self.distances_m.is_empty(), "corpus needs at least one distance");
        ensure_arg!(
            self.distances_m.iter().all(|&d| d > self.radius_m && d.is_finite()),
            "every distance must exceed the array radius"
        );
        ensure_arg!(
            self.counts.spoof + self.counts.modulated == 0 || !self.device_presets.is_empty(),
            "spoof renders need at least one device preset"
        );
        for id in &self.device_presets {
            ensure_arg!(device_preset(id).is_some(), "unknown device preset {id:?}");
        }
        ensure_arg!(self.n_mics >= 2, "corpus arrays need at least two microphones");
        ensure_arg!(self.n_users >= 1, "corpus needs at least one user");
        ensure_arg!(self.duration_s >= MIN_DURATION_S, "duration must be at least {MIN_DURATION_S} s");
        Ok(())
    }
}

/// One planned render of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderJob {
    pub file_name: String,
    pub scene: Scene,
    pub profile: SourceProfile,
    pub user_id: String,
    pub seed: u64,
    pub duration_s: f64,
}

impl RenderJob {
    pub fn render(&self) -> Result<MultiChannelAudio> {
        synthesize_scene(&self.scene, &self.profile, self.duration_s, self.seed)
    }

    pub fn manifest_entry(&self) -> ManifestEntry {
        ManifestEntry {
            path: PathBuf::from(&self.file_name),
            label: self.scene.source_kind.label(),
            distance_m: Some(self.scene.source_distance_m),
            device_id: self.scene.source_kind.device_id().map(|id| match self.scene.source_kind {
                SourceKind::Modulated(_) => format!("{id}+inverse"),
                _ => id.to_string(),
            }),
            user_id: Some(self.user_id.clone()),
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expands a corpus config into render jobs, stratified over distances and devices.
pub fn plan_corpus(cfg: &CorpusConfig) -> Result<Vec<RenderJob>> {
    cfg.validate()?;
    let mut user_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xC0DE));
    let users: Vec<SourceProfile> = (0..cfg.n_users).map(|_| SourceProfile::random_voice(&mut user_rng)).collect();
    let presets: Vec<DevicePreset> = cfg
        .device_presets
        .iter()
        .map(|id| device_preset(id).expect("validated"))
        .collect();

    let classes = [
        ("authentic", cfg.counts.authentic, 1u64),
        ("spoof", cfg.counts.spoof, 2),
        ("modulated", cfg.counts.modulated, 3),
    ];
    let mut jobs = Vec::new();
    for (name, count, class_stream) in classes {
        for i in 0..count {
            let seed = mix_seed(cfg.seed, (class_stream << 32) | i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let distance = cfg.distances_m[i % cfg.distances_m.len()];
            let user = (i / cfg.distances_m.len()) % cfg.n_users;
            let mut profile = users[user].utterance(&mut rng);
            let kind = match name {
                "authentic" => SourceKind::Human,
                _ => {
                    let preset = &presets[(i / (cfg.distances_m.len() * cfg.n_users)) % presets.len()];
                    profile = profile.with_device(preset.filter);
                    if name == "spoof" {
                        SourceKind::Device(preset.id.clone())
                    } else {
                        SourceKind::Modulated(preset.id.clone())
                    }
                }
            };
            let rotation = rng.random_range(0.0..2.0 * PI);
            let geometry = ArrayGeometry::new(cfg.n_mics, cfg.radius_m, rotation)?;
            let mut scene = Scene::new(geometry, distance, kind);
            scene.snr_db = cfg.snr_db;
            scene.absorption_per_hz = cfg.absorption_per_hz;
            jobs.push(RenderJob {
                file_name: format!("{name}_{i:04}.wav"),
                scene,
                profile,
                user_id: format!("u{user:02}"),
                seed: rng.random(),
                duration_s: cfg.duration_s,
            });
        }
    }
    Ok(jobs)
}

pub const MANIFEST_FILE: &str = "manifest.csv";

/// Renders every job of `cfg` into `out_dir` and writes `manifest.csv` last.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let jobs = plan_corpus(cfg)?;
    jobs.par_iter()
        .map(|job| {
            let audio = job.render()?;
            save_wav(&audio, out_dir.join(&job.file_name), cfg.bit_depth)
        })
        .collect::<Result<Vec<()>>>()?;
    let manifest = DatasetManifest {
        entries: jobs.iter().map(RenderJob::manifest_entry).collect(),
        base_dir: out_dir.to_path_buf(),
    };
    write_atomic(out_dir.join(MANIFEST_FILE), &manifest.to_csv_bytes()?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, StftConfig};

    fn test_profile(f0: f64) -> SourceProfile {
        let env = SpectralEnvelope::new(vec![(0.0, 0.6), (500.0, 1.0), (1500.0, 0.4), (3000.0, 0.15), (7000.0, 0.01)]).unwrap();
        SourceProfile::voice(f0, env)
    }

    fn scene(kind: SourceKind) -> Scene {
        Scene::new(ArrayGeometry::new(6, 0.05, 0.3).unwrap(), 1.2, kind)
    }

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    /// Mean STFT magnitude of channel 0 per bin.
    fn mean_spectrum(a: &MultiChannelAudio, ch: usize) -> (Vec<f64>, f64) {
        let s = stft(a.channel(ch), StftConfig::default(), a.sample_rate_hz() as f64).unwrap();
        let mut acc = vec![0.0; s.n_bins()];
        for j in 0..s.n_frames() {
            for (x, v) in acc.iter_mut().zip(s.frame(j)) {
                *x += v / s.n_frames() as f64;
            }
        }
        (acc, s.bin_hz)
    }

    fn band_power(spec: &[f64], bin_hz: f64, lo: f64, hi: f64) -> f64 {
        spec.iter()
            .enumerate()
            .filter(|(b, _)| (*b as f64 * bin_hz) >= lo && (*b as f64 * bin_hz) <= hi)
            .map(|(_, v)| v * v)
            .sum()
    }

    #[test]
    fn deterministic_given_seed() {
        let mut s = scene(SourceKind::Human);
        s.snr_db = Some(25.0);
        let p = test_profile(120.0);
        let a = synthesize_scene(&s, &p, 0.5, 99).unwrap();
        let b = synthesize_scene(&s, &p, 0.5, 99).unwrap();
        assert_eq!(a, b);
        let c = synthesize_scene(&s, &p, 0.5, 100).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.num_channels(), 6);
        assert_eq!(a.num_frames(), 24_000);
        assert!((a.peak() - PEAK_LEVEL).abs() < 1e-12);
    }

    #[test]
    fn equidistant_lossless_channels_identical_up_to_delay() {
        // a single mic pair at broadside is equidistant from the source
        let mut s = Scene::new(ArrayGeometry::new(2, 0.05, PI / 2.0).unwrap(), 1.0, SourceKind::Human);
        s.absorption_per_hz = 0.0;
        let a = synthesize_scene(&s, &test_profile(150.0), 0.5, 3).unwrap();
        for m in 0..a.num_frames() {
            assert!((a.get(m, 0) - a.get(m, 1)).abs() < 1e-9);
        }
    }

    #[test]
    fn device_filter_cuts_sub_bass() {
        let preset = device_preset("hp300o4").unwrap();
        let p = test_profile(100.0);
        let human = synthesize_scene(&scene(SourceKind::Human), &p, 1.0, 5).unwrap();
        let dev = synthesize_scene(&scene(SourceKind::Device(preset.id.clone())), &p.clone().with_device(preset.filter), 1.0, 5).unwrap();
        for ch in 0..6 {
            let (hs, bin_hz) = mean_spectrum(&human, ch);
            let (ds, _) = mean_spectrum(&dev, ch);
            // compare relative to the 1-2 kHz band so peak normalization cancels
            let h = band_power(&hs, bin_hz, 90.0, 110.0) / band_power(&hs, bin_hz, 1000.0, 2000.0);
            let d = band_power(&ds, bin_hz, 90.0, 110.0) / band_power(&ds, bin_hz, 1000.0, 2000.0);
            let drop_db = 10.0 * (h / d).log10();
            assert!(drop_db >= 20.0, "channel {ch}: only {drop_db:.1} dB");
        }
    }

    #[test]
    fn absorption_lowers_every_channel_rms() {
        let p = test_profile(140.0);
        let mut prev: Option<Vec<f64>> = None;
        for alpha in [0.0, 5e-5, 1e-4, 2e-4] {
            let mut s = scene(SourceKind::Human);
            s.absorption_per_hz = alpha;
            let (raw, _) = propagate(&s, &p, 0.5, 8, SourceFiltering::None).unwrap();
            let levels: Vec<f64> = raw.iter().map(|c| rms(c)).collect();
            if let Some(prev) = &prev {
                for (now, before) in levels.iter().zip(prev) {
                    assert!(now < before, "{now} !< {before} at alpha {alpha}");
                }
            }
            prev = Some(levels);
        }
    }

    #[test]
    fn inverse_filter_flattens_device_response() {
        for preset in device_presets() {
            let d = preset.filter;
            for i in 1..=2400 {
                let f = i as f64 * 10.0;
                let m = d.magnitude(f);
                let inv = d.inverse_gain(f);
                if m >= 0.1 {
                    assert!((inv * m - 1.0).abs() <= 0.02, "{} at {f} Hz", preset.id);
                } else {
                    assert_eq!(inv, INVERSE_CLAMP);
                }
            }
            assert_eq!(d.inverse_gain(0.0), INVERSE_CLAMP);
            // 20 dB boundary sits below the corner
            assert!(d.magnitude(d.corner_hz / 4.0) < 0.1 || preset.filter.order == 2);
        }
    }

    #[test]
    fn validation_errors() {
        let p = test_profile(120.0);
        assert!(synthesize_scene(&scene(SourceKind::Human), &p, 0.4, 1).is_err());
        assert!(synthesize_scene(&scene(SourceKind::Device("hp300o4".into())), &p, 1.0, 1).is_err());
        let mut near = scene(SourceKind::Human);
        near.source_distance_m = 0.04;
        assert!(synthesize_scene(&near, &p, 1.0, 1).is_err());
        assert!(synthesize_modulated(&scene(SourceKind::Human), &p, 1.0, 1).is_err());
    }

    #[test]
    fn envelope_interpolates() {
        let e = SpectralEnvelope::new(vec![(100.0, 1.0), (0.0, 0.5), (300.0, 0.25)]).unwrap();
        assert_eq!(e.gain(-5.0), 0.5);
        assert_eq!(e.gain(50.0), 0.75);
        assert_eq!(e.gain(200.0), 0.625);
        assert_eq!(e.gain(1e4), 0.25);
        assert!(SpectralEnvelope::new(vec![(0.0, 0.0)]).is_err());
    }

    #[test]
    fn corpus_plan_is_stratified() {
        let mut cfg = CorpusConfig::new(12, 18, vec![0.6, 1.2]);
        cfg.n_users = 3;
        let jobs = plan_corpus(&cfg).unwrap();
        assert_eq!(jobs.len(), 30);
        let spoof: Vec<_> = jobs.iter().filter(|j| j.scene.source_kind != SourceKind::Human).collect();
        for preset in device_presets() {
            assert_eq!(spoof.iter().filter(|j| j.scene.source_kind.device_id() == Some(&preset.id)).count(), 6);
        }
        for d in [0.6, 1.2] {
            assert_eq!(jobs.iter().filter(|j| j.scene.source_distance_m == d).count(), 15);
        }
        assert_eq!(plan_corpus(&cfg).unwrap(), jobs);
    }
}
