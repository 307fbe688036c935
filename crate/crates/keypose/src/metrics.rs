//! Evaluation metrics: MPJPE at a frame (with ave/best selection over
//! multiple predictions), PSKL in both directions, and pairwise
//! diversity.
//!
//! PSKL compares normalized power spectra of the per-coordinate
//! trajectories; the KL divergence is reported in nats, computed with no
//! spectral window, averaged over the 3J coordinate dimensions, and
//! epsilon-smoothed so exact-zero bins stay finite.

use std::collections::BTreeMap;

use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::MotionSequence;

pub const PSKL_EPSILON: f64 = 1e-8;

/// Mean per-joint position error between two sequences at a 1-based
/// frame, in millimeters.
pub fn mpjpe(pred: &MotionSequence, gt: &MotionSequence, at_frame: usize) -> Result<f64> {
    if at_frame < 1 || at_frame > pred.len() || at_frame > gt.len() {
        return Err(Error::invalid(
            "frame",
            format!(
                "frame {at_frame} out of range (pred {} frames, gt {})",
                pred.len(),
                gt.len()
            ),
        ));
    }
    if pred.joint_count() != gt.joint_count() {
        return Err(Error::JointMismatch {
            expected: gt.joint_count(),
            got: pred.joint_count(),
        });
    }
    Ok(pred.frame(at_frame).distance_mm(gt.frame(at_frame)))
}

/// Mean MPJPE over every frame both sequences share.
pub fn mean_mpjpe(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    let n = pred.len().min(gt.len());
    if n == 0 {
        return Err(Error::invalid("sequences", "empty"));
    }
    let mut sum = 0.0;
    for t in 1..=n {
        sum += mpjpe(pred, gt, t)?;
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiMpjpe {
    /// MPJPE at the frame, taken from the prediction with the smallest
    /// whole-horizon mean MPJPE.
    pub ave_mm: f64,
    /// Smallest MPJPE at the frame across all predictions.
    pub best_mm: f64,
}

pub fn mpjpe_multi(
    preds: &[MotionSequence],
    gt: &MotionSequence,
    at_frame: usize,
) -> Result<MultiMpjpe> {
    if preds.is_empty() {
        return Err(Error::invalid("predictions", "empty list"));
    }
    let mut ave = (f64::INFINITY, 0usize);
    let mut best = f64::INFINITY;
    for (i, pred) in preds.iter().enumerate() {
        let whole = mean_mpjpe(pred, gt)?;
        if whole < ave.0 {
            ave = (whole, i);
        }
        best = best.min(mpjpe(pred, gt, at_frame)?);
    }
    Ok(MultiMpjpe {
        ave_mm: mpjpe(&preds[ave.1], gt, at_frame)?,
        best_mm: best,
    })
}

/// Normalized power spectrum of every coordinate trajectory.
///
/// Returns 3J vectors of length T: squared DFT magnitudes normalized to
/// sum 1, zero-frequency bin included. A trajectory with no power at all
/// is treated as a delta at frequency zero.
pub fn power_spectrum(seq: &MotionSequence) -> Result<Vec<Vec<f64>>> {
    let t = seq.len();
    if t < 2 {
        return Err(Error::SequenceTooShort { len: t, min: 2 });
    }
    let dims = seq.joint_count() * 3;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(t);
    let mut spectra = Vec::with_capacity(dims);
    for d in 0..dims {
        let (j, c) = (d / 3, d % 3);
        let mut buf: Vec<Complex64> = seq
            .frames
            .iter()
            .map(|f| Complex64::new(f.joints[j][c], 0.0))
            .collect();
        fft.process(&mut buf);
        let mut power: Vec<f64> = buf.iter().map(|z| z.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        if total > 0.0 {
            for p in &mut power {
                *p /= total;
            }
        } else {
            power[0] = 1.0;
        }
        spectra.push(power);
    }
    Ok(spectra)
}

/// KL divergence between two distributions in nats, with epsilon
/// smoothing and renormalization so zero bins stay finite.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let np: f64 = 1.0 + epsilon * p.len() as f64;
    let nq: f64 = 1.0 + epsilon * q.len() as f64;
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| {
            let ps = (pi + epsilon) / np;
            let qs = (qi + epsilon) / nq;
            ps * (ps / qs).ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsklPair {
    /// KL(spectrum(a) || spectrum(b)).
    pub gt_pred: f64,
    /// KL(spectrum(b) || spectrum(a)).
    pub pred_gt: f64,
}

impl PsklPair {
    pub fn average(&self) -> f64 {
        (self.gt_pred + self.pred_gt) / 2.0
    }

    pub fn difference(&self) -> f64 {
        (self.gt_pred - self.pred_gt).abs()
    }
}

/// Power-spectrum KL divergence in both directions, averaged over the 3J
/// coordinate dimensions.
pub fn pskl(a: &MotionSequence, b: &MotionSequence) -> Result<PsklPair> {
    if a.len() != b.len() || a.joint_count() != b.joint_count() {
        return Err(Error::invalid(
            "sequences",
            format!(
                "shape mismatch: {}x{} vs {}x{}",
                a.len(),
                a.joint_count(),
                b.len(),
                b.joint_count()
            ),
        ));
    }
    let sa = power_spectrum(a)?;
    let sb = power_spectrum(b)?;
    let dims = sa.len() as f64;
    let mut gt_pred = 0.0;
    let mut pred_gt = 0.0;
    for (pa, pb) in sa.iter().zip(sb.iter()) {
        gt_pred += kl_divergence(pa, pb, PSKL_EPSILON);
        pred_gt += kl_divergence(pb, pa, PSKL_EPSILON);
    }
    Ok(PsklPair {
        gt_pred: gt_pred / dims,
        pred_gt: pred_gt / dims,
    })
}

/// Mean pairwise L2 distance between flattened sequences, in mm.
pub fn diversity(preds: &[MotionSequence]) -> Result<f64> {
    Ok(mean_of(&diversity_pairs(preds)?))
}

/// The individual pairwise distances behind [`diversity`], in a fixed
/// (i < j) order.
pub fn diversity_pairs(preds: &[MotionSequence]) -> Result<Vec<f64>> {
    if preds.len() < 2 {
        return Err(Error::invalid("predictions", "need at least 2 sequences"));
    }
    let flats: Vec<Vec<f64>> = preds
        .iter()
        .map(|s| {
            let mut flat = Vec::with_capacity(s.len() * s.joint_count() * 3);
            for f in &s.frames {
                flat.extend(f.flat());
            }
            flat
        })
        .collect();
    let dim = flats[0].len();
    if flats.iter().any(|f| f.len() != dim) {
        return Err(Error::invalid("predictions", "shape mismatch"));
    }
    let mut pairs = Vec::with_capacity(preds.len() * (preds.len() - 1) / 2);
    for i in 0..flats.len() {
        for j in i + 1..flats.len() {
            let d2: f64 = flats[i]
                .iter()
                .zip(flats[j].iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            pairs.push(d2.sqrt());
        }
    }
    Ok(pairs)
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregate evaluation output; serializes deterministically (struct
/// field order, ordered maps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keyed by horizon seconds.
    pub mpjpe_at: BTreeMap<u32, MultiMpjpe>,
    pub pskl: PsklSummary,
    pub diversity: f64,
    pub diversity_pairs: Vec<f64>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsklSummary {
    pub gt_pred: f64,
    pub pred_gt: f64,
    pub average: f64,
    pub difference: f64,
}

impl From<PsklPair> for PsklSummary {
    fn from(pair: PsklPair) -> Self {
        PsklSummary {
            gt_pred: pair.gt_pred,
            pred_gt: pair.pred_gt,
            average: pair.average(),
            difference: pair.difference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub pskl_units: String,
    pub spectral_window: String,
    pub n_predictions: usize,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        ReportMetadata {
            pskl_units: "nats".into(),
            spectral_window: "none".into(),
            n_predictions: 0,
        }
    }
}

/// Evaluate a set of sampled predictions against the ground-truth future.
///
/// MPJPE is reported at each requested horizon second (seconds map to
/// frames via the ground truth's frame rate). The PSKL pair comes from
/// the prediction whose spectrum is closest to the ground truth (smallest
/// two-direction average), mirroring how multi-prediction methods report
/// it.
pub fn evaluate_forecasts(
    preds: &[MotionSequence],
    gt: &MotionSequence,
    seconds: &[u32],
) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::invalid("predictions", "empty list"));
    }
    let mut mpjpe_at = BTreeMap::new();
    for &s in seconds {
        let frame = (s as f64 * gt.frame_rate_hz).round() as usize;
        mpjpe_at.insert(s, mpjpe_multi(preds, gt, frame)?);
    }
    let mut best_pskl: Option<PsklPair> = None;
    for pred in preds {
        let pair = pskl(gt, pred)?;
        let better = best_pskl.is_none_or(|b| pair.average() < b.average());
        if better {
            best_pskl = Some(pair);
        }
    }
    let pskl_pair = best_pskl.expect("nonempty predictions");
    let (diversity, pairs) = if preds.len() >= 2 {
        let pairs = diversity_pairs(preds)?;
        (mean_of(&pairs), pairs)
    } else {
        (0.0, Vec::new())
    };
    Ok(EvalReport {
        mpjpe_at,
        pskl: pskl_pair.into(),
        diversity,
        diversity_pairs: pairs,
        metadata: ReportMetadata {
            n_predictions: preds.len(),
            ..ReportMetadata::default()
        },
    })
}

impl EvalReport {
    /// Mean of several reports field-by-field; per-pair diversity lists
    /// are concatenated.
    pub fn mean(reports: &[EvalReport]) -> Result<EvalReport> {
        if reports.is_empty() {
            return Err(Error::invalid("reports", "empty list"));
        }
        let n = reports.len() as f64;
        let mut mpjpe_at: BTreeMap<u32, MultiMpjpe> = BTreeMap::new();
        for &s in reports[0].mpjpe_at.keys() {
            let ave = reports.iter().map(|r| r.mpjpe_at[&s].ave_mm).sum::<f64>() / n;
            let best = reports.iter().map(|r| r.mpjpe_at[&s].best_mm).sum::<f64>() / n;
            mpjpe_at.insert(
                s,
                MultiMpjpe {
                    ave_mm: ave,
                    best_mm: best,
                },
            );
        }
        let gt_pred = reports.iter().map(|r| r.pskl.gt_pred).sum::<f64>() / n;
        let pred_gt = reports.iter().map(|r| r.pskl.pred_gt).sum::<f64>() / n;
        Ok(EvalReport {
            mpjpe_at,
            pskl: PsklPair { gt_pred, pred_gt }.into(),
            diversity: reports.iter().map(|r| r.diversity).sum::<f64>() / n,
            diversity_pairs: reports
                .iter()
                .flat_map(|r| r.diversity_pairs.iter().copied())
                .collect(),
            metadata: ReportMetadata {
                n_predictions: reports.iter().map(|r| r.metadata.n_predictions).sum(),
                ..ReportMetadata::default()
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut body = self.to_json();
        body.push('\n');
        crate::io::write_atomic(path.as_ref(), body.as_bytes())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<EvalReport> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}
