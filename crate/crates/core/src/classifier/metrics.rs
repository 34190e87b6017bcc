//! Error rates, equal error rate and evaluation reports.
//!
//! Authentic is the positive class: a sample is accepted when
//! `score >= threshold`. FAR is the share of spoofs accepted, FRR the share
//! of authentic samples rejected.

use serde::{Deserialize, Serialize};

use crate::audio_io::Label;
use crate::error::{ensure_arg, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    #[serde(rename = "tp")]
    pub true_accept: usize,
    #[serde(rename = "fn")]
    pub false_reject: usize,
    #[serde(rename = "tn")]
    pub true_reject: usize,
    #[serde(rename = "fp")]
    pub false_accept: usize,
}

impl Counts {
    pub fn from_decisions(labels: &[Label], accepted: &[bool]) -> Self {
        let mut c = Counts::default();
        for (label, &acc) in labels.iter().zip(accepted) {
            match (label, acc) {
                (Label::Authentic, true) => c.true_accept += 1,
                (Label::Authentic, false) => c.false_reject += 1,
                (Label::Spoof, false) => c.true_reject += 1,
                (Label::Spoof, true) => c.false_accept += 1,
            }
        }
        c
    }

    pub fn authentic(&self) -> usize {
        self.true_accept + self.false_reject
    }

    pub fn spoof(&self) -> usize {
        self.true_reject + self.false_accept
    }

    pub fn total(&self) -> usize {
        self.authentic() + self.spoof()
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_accept + self.true_reject) as f64 / self.total() as f64
    }

    /// `None` without spoof samples.
    pub fn far(&self) -> Option<f64> {
        ratio(self.false_accept, self.spoof())
    }

    /// `None` without authentic samples.
    pub fn frr(&self) -> Option<f64> {
        ratio(self.false_reject, self.authentic())
    }

    pub fn trr(&self) -> Option<f64> {
        ratio(self.true_reject, self.spoof())
    }

    pub fn add(&mut self, other: &Counts) {
        self.true_accept += other.true_accept;
        self.false_reject += other.false_reject;
        self.true_reject += other.true_reject;
        self.false_accept += other.false_accept;
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
}

fn check_scores(scores: &[f64], labels: &[Label]) -> Result<()> {
    ensure_arg!(
        scores.len() == labels.len(),
        "{} scores but {} labels",
        scores.len(),
        labels.len()
    );
    ensure_arg!(!scores.is_empty(), "no scores to evaluate");
    ensure_arg!(scores.iter().all(|s| s.is_finite()), "scores must be finite");
    Ok(())
}

/// FAR and FRR at every distinct score plus a sentinel above all scores.
///
/// Thresholds ascend, so FAR falls from 1 to 0 and FRR rises from 0 to 1.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<Vec<RocPoint>> {
    check_scores(scores, labels)?;
    let n_auth = labels.iter().filter(|l| **l == Label::Authentic).count();
    let n_spoof = labels.len() - n_auth;
    ensure_arg!(
        n_auth > 0 && n_spoof > 0,
        "ROC needs both classes ({n_auth} authentic, {n_spoof} spoof)"
    );
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = Vec::new();
    // samples strictly below the current threshold are rejected
    let (mut auth_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        points.push(RocPoint {
            threshold: t,
            far: (n_spoof - spoof_below) as f64 / n_spoof as f64,
            frr: auth_below as f64 / n_auth as f64,
        });
        while i < order.len() && scores[order[i]] == t {
            match labels[order[i]] {
                Label::Authentic => auth_below += 1,
                Label::Spoof => spoof_below += 1,
            }
            i += 1;
        }
    }
    let top = points.last().map(|p| p.threshold).unwrap_or(0.0);
    let sentinel = if top < 1.0 { 1.0 } else { top.next_up() };
    points.push(RocPoint {
        threshold: sentinel,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Crossing of the FAR and FRR curves, linearly interpolated between the
/// two ROC points that bracket it.
///
/// When the crossing falls exactly on a ROC point the returned threshold is
/// the midpoint to the previous point; both give identical decisions on the
/// evaluated scores.
pub fn equal_error_rate(scores: &[f64], labels: &[Label]) -> Result<EerPoint> {
    eer_from_roc(&roc_curve(scores, labels)?)
}

pub fn eer_from_roc(roc: &[RocPoint]) -> Result<EerPoint> {
    ensure_arg!(roc.len() >= 2, "ROC needs at least two points");
    let j = roc
        .iter()
        .position(|p| p.frr >= p.far)
        .ok_or_else(|| Error::InvalidArgument("FRR never reaches FAR".into()))?;
    if j == 0 {
        return Ok(EerPoint {
            eer: roc[0].far,
            threshold: roc[0].threshold,
        });
    }
    let (a, b) = (roc[j - 1], roc[j]);
    let (da, db) = (a.frr - a.far, b.frr - b.far);
    let w = -da / (db - da);
    let eer = a.far + w * (b.far - a.far);
    let threshold = if w >= 1.0 {
        0.5 * (a.threshold + b.threshold)
    } else {
        a.threshold + w * (b.threshold - a.threshold)
    };
    Ok(EerPoint { eer, threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub far: Option<f64>,
    pub frr: Option<f64>,
    pub trr: Option<f64>,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub threshold_used: Option<f64>,
    pub counts: Counts,
    pub roc: Vec<RocPoint>,
}

impl EvaluationReport {
    /// Report for explicit accept decisions; EER and ROC come from `scores`
    /// when both classes are present.
    pub fn from_decisions(
        scores: &[f64],
        labels: &[Label],
        accepted: &[bool],
        threshold_used: Option<f64>,
    ) -> Result<Self> {
        check_scores(scores, labels)?;
        ensure_arg!(accepted.len() == labels.len(), "decision count mismatch");
        let counts = Counts::from_decisions(labels, accepted);
        let (roc, eer) = if counts.authentic() > 0 && counts.spoof() > 0 {
            let roc = roc_curve(scores, labels)?;
            let eer = eer_from_roc(&roc)?;
            (roc, Some(eer))
        } else {
            (Vec::new(), None)
        };
        Ok(Self {
            n_samples: counts.total(),
            accuracy: counts.accuracy(),
            far: counts.far(),
            frr: counts.frr(),
            trr: counts.trr(),
            eer: eer.map(|e| e.eer),
            eer_threshold: eer.map(|e| e.threshold),
            threshold_used,
            counts,
            roc,
        })
    }

    pub fn at_threshold(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Self> {
        let accepted: Vec<bool> = scores.iter().map(|s| *s >= threshold).collect();
        Self::from_decisions(scores, labels, &accepted, Some(threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Authentic as A, Spoof as S};

    /// Direct counting at each candidate threshold, then the first segment
    /// where the FAR and FRR lines intersect.
    fn brute_force_eer(scores: &[f64], labels: &[Label]) -> f64 {
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts.push(if *ts.last().unwrap() < 1.0 { 1.0 } else { ts.last().unwrap().next_up() });
        let rates = |t: f64| {
            let (mut fa, mut ns, mut fr, mut na) = (0.0, 0.0, 0.0, 0.0);
            for (s, l) in scores.iter().zip(labels) {
                if *l == S {
                    ns += 1.0;
                    if *s >= t {
                        fa += 1.0;
                    }
                } else {
                    na += 1.0;
                    if *s < t {
                        fr += 1.0;
                    }
                }
            }
            (fa / ns, fr / na)
        };
        let pts: Vec<(f64, f64)> = ts.iter().map(|&t| rates(t)).collect();
        for k in 1..pts.len() {
            let ((far0, frr0), (far1, frr1)) = (pts[k - 1], pts[k]);
            if frr1 >= far1 {
                // intersect far0 + u (far1 - far0) = frr0 + u (frr1 - frr0)
                let u = (frr0 - far0) / ((far1 - far0) - (frr1 - frr0));
                return far0 + u * (far1 - far0);
            }
        }
        unreachable!()
    }

    #[test]
    fn perfectly_separated() {
        let scores = [0.1, 0.2, 0.3, 0.8, 0.9];
        let labels = [S, S, S, A, A];
        let e = equal_error_rate(&scores, &labels).unwrap();
        assert_eq!(e.eer, 0.0);
        assert!((e.threshold - 0.55).abs() < 1e-12);
        let r = EvaluationReport::at_threshold(&scores, &labels, e.threshold).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn fully_inverted() {
        let e = equal_error_rate(&[0.9, 0.8, 0.1, 0.2], &[S, S, A, A]).unwrap();
        assert!((e.eer - 1.0).abs() < 1e-12, "{}", e.eer);
    }

    #[test]
    fn analytic_interleaved_case() {
        // thresholds 0.1..0.4 and 1.0: FAR 1, 1/2, 1/2, 0, 0 ; FRR 0, 0, 1/2, 1/2, 1
        let scores = [0.1, 0.2, 0.3, 0.4];
        let labels = [A, S, A, S];
        let roc = roc_curve(&scores, &labels).unwrap();
        let far: Vec<f64> = roc.iter().map(|p| p.far).collect();
        let frr: Vec<f64> = roc.iter().map(|p| p.frr).collect();
        assert_eq!(far, vec![1.0, 1.0, 0.5, 0.5, 0.0]);
        assert_eq!(frr, vec![0.0, 0.5, 0.5, 1.0, 1.0]);
        let e = eer_from_roc(&roc).unwrap();
        assert_eq!(e.eer, 0.5);
        assert!((e.threshold - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ties_share_a_threshold() {
        let roc = roc_curve(&[0.5, 0.5, 0.5, 0.5], &[A, S, A, S]).unwrap();
        assert_eq!(roc.len(), 2);
        assert_eq!(eer_from_roc(&roc).unwrap().eer, 0.5);
    }

    #[test]
    fn sentinel_above_saturated_scores() {
        let roc = roc_curve(&[0.2, 1.0], &[S, A]).unwrap();
        assert!(roc.last().unwrap().threshold > 1.0);
        assert_eq!(equal_error_rate(&[0.2, 1.0], &[S, A]).unwrap().eer, 0.0);
    }

    #[test]
    fn errors() {
        assert!(roc_curve(&[0.1, 0.2], &[A, A]).is_err());
        assert!(roc_curve(&[0.1], &[A, S]).is_err());
        assert!(roc_curve(&[f64::NAN, 0.2], &[A, S]).is_err());
        assert!(roc_curve(&[], &[]).is_err());
    }

    #[test]
    fn one_class_report_has_no_eer() {
        let r = EvaluationReport::at_threshold(&[0.1, 0.7, 0.8], &[S, S, S], 0.5).unwrap();
        assert_eq!(r.eer, None);
        assert_eq!(r.frr, None);
        assert_eq!(r.far, Some(2.0 / 3.0));
        assert_eq!(r.trr, Some(1.0 / 3.0));
        assert!(r.roc.is_empty());
    }

    #[test]
    fn frr_from_large_counts() {
        let mut labels = vec![A; 10_241];
        labels.extend([S; 5]);
        let accepted: Vec<bool> = (0..labels.len()).map(|i| i >= 40).collect();
        let scores: Vec<f64> = accepted.iter().map(|&a| if a { 0.9 } else { 0.1 }).collect();
        let r = EvaluationReport::from_decisions(&scores, &labels, &accepted, None).unwrap();
        assert_eq!(r.counts.false_reject, 40);
        assert!((r.frr.unwrap() * 100.0 - 0.39).abs() < 0.005);
    }

    fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u32..20).prop_map(|k| k as f64 / 20.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_filter_map("both classes", |(s, b)| {
                    let labels: Vec<Label> = b.iter().map(|&x| if x { A } else { S }).collect();
                    (labels.contains(&A) && labels.contains(&S)).then_some((s, labels))
                })
        })
    }

    proptest! {
        #[test]
        fn eer_matches_brute_force((scores, labels) in labelled_scores()) {
            let e = equal_error_rate(&scores, &labels).unwrap();
            let oracle = brute_force_eer(&scores, &labels);
            prop_assert!((e.eer - oracle).abs() < 1e-12, "{} vs {}", e.eer, oracle);
            prop_assert!((0.0..=1.0).contains(&e.eer));
        }

        #[test]
        fn roc_is_monotone((scores, labels) in labelled_scores()) {
            let roc = roc_curve(&scores, &labels).unwrap();
            prop_assert_eq!(roc[0].far, 1.0);
            prop_assert_eq!(roc[0].frr, 0.0);
            for w in roc.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[1].far <= w[0].far && w[1].frr >= w[0].frr);
            }
        }
    }
}
