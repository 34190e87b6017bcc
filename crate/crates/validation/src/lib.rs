//! Reference implementations and corpus helpers for the validation suite.
//!
//! The oracles here are written independently of `liveness-core` and are
//! deliberately naive.

use liveness_core::audio_io::{Label, MultiChannelAudio};
use liveness_core::dsp::{stft, StftConfig};
use liveness_core::features::{extract, FeatureConfig, FeatureTable};
use liveness_core::synth::{plan_corpus, synthesize_scene, CorpusConfig, RenderJob, SourceKind};
use liveness_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Yule-Walker by Gaussian elimination with partial pivoting, then
/// `c_m = -a_m - sum_{k=1}^{m-1} (k/m) c_k a_{m-k}` and `c_0 = ln p`.
pub fn lpcc_oracle(x: &[f64], p: usize) -> Vec<f64> {
    let r: Vec<f64> = (0..=p)
        .map(|k| (k..x.len()).map(|n| x[n] * x[n - k]).sum())
        .collect();
    let mut m: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut row: Vec<f64> = (0..p).map(|j| r[i.abs_diff(j)]).collect();
            row.push(-r[i + 1]);
            row
        })
        .collect();
    for col in 0..p {
        let piv = (col..p).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for row in col + 1..p {
            let f = m[row][col] / m[col][col];
            for c in col..=p {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    let mut a = vec![0.0; p + 1];
    a[0] = 1.0;
    for i in (0..p).rev() {
        let mut s = m[i][p];
        for j in i + 1..p {
            s -= m[i][j] * a[j + 1];
        }
        a[i + 1] = s / m[i][i];
    }
    let mut c = vec![0.0; p + 1];
    c[0] = (p as f64).ln();
    for mm in 1..=p {
        let s: f64 = (1..mm).map(|k| (k as f64 / mm as f64) * c[k] * a[mm - k]).sum();
        c[mm] = -a[mm] - s;
    }
    c
}

/// EER by enumerating every distinct score (plus one threshold above all of
/// them) as an accept-if-`>=` threshold, counting errors directly, and
/// intersecting the FAR and FRR polylines.
pub fn eer_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let top = *ts.last().unwrap();
    ts.push(if top < 1.0 { 1.0 } else { top.next_up() });
    let n_spoof = labels.iter().filter(|l| **l == Label::Spoof).count() as f64;
    let n_auth = labels.len() as f64 - n_spoof;
    let rates: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            let fa = scores.iter().zip(labels).filter(|(s, l)| **l == Label::Spoof && **s >= t).count();
            let fr = scores.iter().zip(labels).filter(|(s, l)| **l == Label::Authentic && **s < t).count();
            (fa as f64 / n_spoof, fr as f64 / n_auth)
        })
        .collect();
    for k in 1..rates.len() {
        let ((far0, frr0), (far1, frr1)) = (rates[k - 1], rates[k]);
        if frr1 >= far1 {
            let u = (frr0 - far0) / ((far1 - far0) - (frr1 - frr0));
            return far0 + u * (far1 - far0);
        }
    }
    unreachable!("FRR reaches 1 at the top threshold")
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Seeded white noise through a random 6-tap FIR.
pub fn coloured_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let white: Vec<f64> = (0..len + taps.len()).map(|_| rng.sample(StandardNormal)).collect();
    (0..len)
        .map(|n| taps.iter().enumerate().map(|(k, t)| t * white[n + taps.len() - k]).sum())
        .collect()
}

/// Mean log STFT magnitude of channel 0 below 5 kHz, with its mean removed.
pub fn log_envelope(audio: &MultiChannelAudio) -> Vec<f64> {
    let fs = audio.sample_rate_hz() as f64;
    let s = stft(audio.channel(0), StftConfig::default(), fs).unwrap();
    let bins = (5000.0 * 4096.0 / fs) as usize;
    let mut env: Vec<f64> = (0..bins)
        .map(|k| ((0..s.n_frames()).map(|j| s.get(k, j)).sum::<f64>() / s.n_frames() as f64 + 1e-12).ln())
        .collect();
    let m = mean(&env);
    env.iter_mut().for_each(|v| *v -= m);
    env
}

pub fn rms_distance(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// The same scene and utterance as `job`, re-rendered as a live talker and
/// as a plain replay through the job's device.
pub fn counterparts(job: &RenderJob) -> Result<(MultiChannelAudio, MultiChannelAudio)> {
    let mut human_scene = job.scene.clone();
    human_scene.source_kind = SourceKind::Human;
    let mut human_profile = job.profile.clone();
    human_profile.device_filter = None;
    let human = synthesize_scene(&human_scene, &human_profile, job.duration_s, job.seed)?;
    let mut plain_scene = job.scene.clone();
    let id = job.scene.source_kind.device_id().unwrap_or_default().to_string();
    plain_scene.source_kind = SourceKind::Device(id);
    let plain = synthesize_scene(&plain_scene, &job.profile, job.duration_s, job.seed)?;
    Ok((human, plain))
}

/// A rendered corpus reduced to feature rows, in plan order.
pub struct RenderedCorpus {
    pub jobs: Vec<RenderJob>,
    pub features: Vec<Vec<f64>>,
}

impl RenderedCorpus {
    pub fn render(cfg: &CorpusConfig, features: &FeatureConfig) -> Result<Self> {
        let jobs = plan_corpus(cfg)?;
        let rows = jobs
            .par_iter()
            .map(|j| Ok(extract(&j.render()?, features)?.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { jobs, features: rows })
    }

    /// Rows whose job satisfies `keep`, labelled by source kind.
    pub fn table(&self, columns: Vec<String>, keep: impl Fn(&RenderJob) -> bool) -> FeatureTable {
        let mut t = FeatureTable::new(columns);
        for (job, row) in self.jobs.iter().zip(&self.features) {
            if keep(job) {
                t.push(job.file_name.clone().into(), job.scene.source_kind.label(), row.clone());
            }
        }
        t
    }
}

pub fn is_modulated(job: &RenderJob) -> bool {
    matches!(job.scene.source_kind, SourceKind::Modulated(_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eer_oracle_simple_cases() {
        let a = Label::Authentic;
        let s = Label::Spoof;
        assert_eq!(eer_oracle(&[0.9, 0.8, 0.1, 0.2], &[a, a, s, s]), 0.0);
        assert_eq!(eer_oracle(&[0.1, 0.9], &[a, s]), 1.0);
    }

    #[test]
    fn lpcc_oracle_of_ar1() {
        // x[n] = 0.9 x[n-1] + e[n] gives a_1 close to -0.9 and c_1 = -a_1
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0.0; 20_000];
        for n in 1..x.len() {
            x[n] = 0.9 * x[n - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        let c = lpcc_oracle(&x, 1);
        assert!((c[1] - 0.9).abs() < 0.02);
    }
}
