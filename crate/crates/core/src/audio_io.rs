//! Multichannel PCM audio and dataset manifests.
//!
//! Audio is held as an `M x N` sample matrix (M frames, N channels) stored
//! channel-major so per-channel DSP can borrow contiguous slices. WAV files
//! are read and written through `hound`; integer PCM is scaled by the
//! type's full-scale magnitude (32768 for 16-bit, 2^31 for 32-bit) so the
//! most negative code maps to exactly -1.0.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_CHANNELS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelAudio {
    channels: Vec<Vec<f64>>,
    sample_rate_hz: u32,
}

impl MultiChannelAudio {
    /// Builds audio from per-channel sample vectors.
    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate_hz: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidAudio("no channels".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidAudio("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if len == 0 {
            return Err(Error::InvalidAudio("zero-length channels".into()));
        }
        if let Some(k) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::InvalidAudio(format!(
                "channel {k} has {} frames, expected {len}",
                channels[k].len()
            )));
        }
        for (k, ch) in channels.iter().enumerate() {
            if let Some(m) = ch.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidAudio(format!(
                    "non-finite sample at frame {m}, channel {k}"
                )));
            }
        }
        Ok(Self {
            channels,
            sample_rate_hz,
        })
    }

    /// Builds audio from an interleaved buffer (`frame0ch0, frame0ch1, ...`).
    pub fn from_interleaved(samples: &[f64], n_channels: usize, sample_rate_hz: u32) -> Result<Self> {
        if n_channels == 0 || !samples.len().is_multiple_of(n_channels) {
            return Err(Error::InvalidAudio(format!(
                "{} interleaved samples do not divide into {n_channels} channels",
                samples.len()
            )));
        }
        let frames = samples.len() / n_channels;
        let mut channels = vec![Vec::with_capacity(frames); n_channels];
        for frame in samples.chunks_exact(n_channels) {
            for (ch, &v) in channels.iter_mut().zip(frame) {
                ch.push(v);
            }
        }
        Self::from_channels(channels, sample_rate_hz)
    }

    /// M, the number of frames.
    pub fn num_frames(&self) -> usize {
        self.channels[0].len()
    }

    /// N, the number of channels.
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 / self.sample_rate_hz as f64
    }

    /// Column `k` (0-based) of the sample matrix.
    pub fn channel(&self, k: usize) -> &[f64] {
        &self.channels[k]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Sample at row `frame`, column `channel`.
    pub fn get(&self, frame: usize, channel: usize) -> f64 {
        self.channels[channel][frame]
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Returns a copy with channel `k` moved to position `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_channels();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of {n} channels"
            )));
        }
        let mut channels = vec![Vec::new(); n];
        for (k, &dst) in perm.iter().enumerate() {
            channels[dst] = self.channels[k].clone();
        }
        Ok(Self {
            channels,
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * gain).collect())
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "16")]
    Int16,
    #[serde(rename = "32f")]
    Float32,
}

impl FromStr for BitDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "16" => Ok(BitDepth::Int16),
            "32f" => Ok(BitDepth::Float32),
            other => Err(Error::InvalidArgument(format!(
                "bit depth must be 16 or 32f, got {other:?}"
            ))),
        }
    }
}

const I16_SCALE: f64 = 32768.0;
const I32_SCALE: f64 = 2147483648.0;

/// Reads a PCM WAV file (16/32-bit integer or 32-bit float, 1-16 channels).
pub fn load_wav(path: impl AsRef<Path>) -> Result<MultiChannelAudio> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 || n_channels > MAX_CHANNELS {
        return Err(Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: format!("{n_channels} channels (supported: 1-{MAX_CHANNELS})"),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / I16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Int, 32) => reader
            .into_samples::<i32>()
            .map(|s| s.map(|v| v as f64 / I32_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {fmt:?}"),
            })
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    MultiChannelAudio::from_interleaved(&interleaved, n_channels, spec.sample_rate)
}

fn quantize_i16(v: f64) -> i16 {
    (v * I16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes `audio` as WAV. Samples outside [-1, 1] are rejected, not clipped.
pub fn save_wav(audio: &MultiChannelAudio, path: impl AsRef<Path>, bit_depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    for (k, ch) in audio.channels().iter().enumerate() {
        if let Some(m) = ch.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::SampleOutOfRange {
                frame: m,
                channel: k,
                value: ch[m],
            });
        }
    }
    let n_channels = audio.num_channels();
    if n_channels > MAX_CHANNELS {
        return Err(Error::InvalidAudio(format!(
            "{n_channels} channels exceeds the supported maximum of {MAX_CHANNELS}"
        )));
    }
    let spec = WavSpec {
        channels: n_channels as u16,
        sample_rate: audio.sample_rate_hz(),
        bits_per_sample: match bit_depth {
            BitDepth::Int16 => 16,
            BitDepth::Float32 => 32,
        },
        sample_format: match bit_depth {
            BitDepth::Int16 => SampleFormat::Int,
            BitDepth::Float32 => SampleFormat::Float,
        },
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for m in 0..audio.num_frames() {
        for ch in audio.channels() {
            match bit_depth {
                BitDepth::Int16 => writer.write_sample(quantize_i16(ch[m])),
                BitDepth::Float32 => writer.write_sample(ch[m] as f32),
            }
            .map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Authentic,
    Spoof,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Authentic => "authentic",
            Label::Spoof => "spoof",
        }
    }

    pub fn is_authentic(self) -> bool {
        self == Label::Authentic
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "authentic" => Ok(Label::Authentic),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?} (expected authentic or spoof)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// As written in the manifest; relative paths are relative to the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub distance_m: Option<f64>,
    pub device_id: Option<String>,
    pub user_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    pub base_dir: PathBuf,
}

pub const MANIFEST_HEADER: [&str; 5] = ["path", "label", "distance_m", "device_id", "user_id"];

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Serializes to the manifest CSV format (LF line endings).
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            let distance = e.distance_m.map(|d| d.to_string()).unwrap_or_default();
            w.write_record([
                e.path.to_string_lossy().as_ref(),
                e.label.as_str(),
                distance.as_str(),
                e.device_id.as_deref().unwrap_or(""),
                e.user_id.as_deref().unwrap_or(""),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(format!("manifest buffer: {e}")))
    }
}

fn optional(field: &str) -> Option<String> {
    (!field.is_empty()).then(|| field.to_string())
}

/// Parses manifest CSV text. `base_dir` is recorded for path resolution.
pub fn parse_manifest(text: &str, base_dir: impl Into<PathBuf>) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(Error::Manifest { line: 1, message: "missing header".into() }),
    };
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(Error::Manifest {
            line: 1,
            message: format!("header must be {}", MANIFEST_HEADER.join(",")),
        });
    }
    let mut entries = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::Manifest { line, message };
        if record.len() != MANIFEST_HEADER.len() {
            return Err(bad(format!(
                "expected {} columns, found {}",
                MANIFEST_HEADER.len(),
                record.len()
            )));
        }
        if record[0].is_empty() {
            return Err(bad("empty path".into()));
        }
        let label = record[1].parse::<Label>().map_err(bad)?;
        let distance_m = match &record[2] {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .ok()
                    .filter(|d| d.is_finite() && *d >= 0.0)
                    .ok_or_else(|| bad(format!("invalid distance_m {s:?}")))?,
            ),
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(&record[0]),
            label,
            distance_m,
            device_id: optional(&record[3]),
            user_id: optional(&record[4]),
        });
    }
    Ok(DatasetManifest {
        entries,
        base_dir: base_dir.into(),
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, base)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn scales_16_bit_extremes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 48000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [32767i16, 32767, -32768, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let a = load_wav(&path).unwrap();
        assert_eq!((a.num_frames(), a.num_channels()), (2, 2));
        for k in 0..2 {
            assert_eq!(a.get(0, k), 32767.0 / 32768.0);
            assert_eq!(a.get(1, k), -1.0);
        }
    }

    #[test]
    fn six_channel_three_seconds() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("six.wav");
        let audio = MultiChannelAudio::from_channels(vec![vec![0.0; 144_000]; 6], 48_000).unwrap();
        save_wav(&audio, &path, BitDepth::Int16).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.num_frames(), 144_000);
        assert_eq!(back.num_channels(), 6);
        assert_eq!(back, audio);
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let ch: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..500).map(|m| (((m * 7 + k * 13) % 97) as f64 / 97.0 - 0.5) as f32 as f64).collect())
            .collect();
        let audio = MultiChannelAudio::from_channels(ch, 44_100).unwrap();
        save_wav(&audio, &path, BitDepth::Float32).unwrap();
        assert_eq!(load_wav(&path).unwrap(), audio);
    }

    #[test]
    fn out_of_range_rejected() {
        let dir = tempdir().unwrap();
        let audio = MultiChannelAudio::from_channels(vec![vec![0.0, 1.5]], 48_000).unwrap();
        let err = save_wav(&audio, dir.path().join("bad.wav"), BitDepth::Int16).unwrap_err();
        assert!(matches!(err, Error::SampleOutOfRange { frame: 1, channel: 0, .. }));
    }

    #[test]
    fn rejects_8_bit_and_empty_files() {
        let dir = tempdir().unwrap();
        let p8 = dir.path().join("u8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p8, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p8), Err(Error::UnsupportedEncoding { .. })));

        let pe = dir.path().join("empty.wav");
        let spec = WavSpec { bits_per_sample: 16, ..spec };
        WavWriter::create(&pe, spec).unwrap().finalize().unwrap();
        assert!(matches!(load_wav(&pe), Err(Error::EmptyAudio(_))));

        assert!(matches!(load_wav(dir.path().join("missing.wav")), Err(Error::Wav { .. })));
    }

    #[test]
    fn interleaving_preserves_channel_order() {
        let a = MultiChannelAudio::from_interleaved(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3, 16_000).unwrap();
        assert_eq!(a.channel(0), &[0.1, 0.4]);
        assert_eq!(a.channel(2), &[0.3, 0.6]);
    }

    #[test]
    fn manifest_parsing() {
        let text = "path,label,distance_m,device_id,user_id\n\
                    a.wav,authentic,0.6,,u1\n\
                    b.wav,spoof,1.2,dev300,u1\n";
        let m = parse_manifest(text, "/data").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.count(Label::Authentic), 1);
        assert_eq!(m.count(Label::Spoof), 1);
        assert_eq!(m.entries[0].device_id, None);
        assert_eq!(m.entries[1].device_id.as_deref(), Some("dev300"));
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/a.wav"));

        let empty = parse_manifest("path,label,distance_m,device_id,user_id\n", ".").unwrap();
        assert!(empty.is_empty());

        let bad = "path,label,distance_m,device_id,user_id\na.wav,authentic,,,\nb.wav,replayed,,,\n";
        match parse_manifest(bad, ".") {
            Err(Error::Manifest { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("replayed"));
            }
            other => panic!("expected manifest error, got {other:?}"),
        }

        let short = "path,label,distance_m,device_id,user_id\na.wav,spoof\n";
        assert!(matches!(parse_manifest(short, "."), Err(Error::Manifest { line: 2, .. })));
    }

    #[test]
    fn manifest_csv_round_trip() {
        let m = parse_manifest(
            "path,label,distance_m,device_id,user_id\nx/a.wav,spoof,2.4,d,\n",
            ".",
        )
        .unwrap();
        let text = String::from_utf8(m.to_csv_bytes().unwrap()).unwrap();
        assert_eq!(text, "path,label,distance_m,device_id,user_id\nx/a.wav,spoof,2.4,d,\n");
    }
}
