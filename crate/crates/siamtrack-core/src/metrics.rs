//! One-pass-evaluation metrics: precision plot over center-distance
//! thresholds, success plot over IoU thresholds, and their summaries.

use crate::error::{Error, Result};
use crate::labels::BBox;

/// Precision thresholds: 0..=50 px in 1 px steps.
pub const PRECISION_STEPS: usize = 51;

/// Success thresholds: 0..=1 IoU in 0.05 steps.
pub const SUCCESS_STEPS: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub precision_curve: Vec<(f64, f64)>,
    pub success_curve: Vec<(f64, f64)>,
    pub auc: f64,
    pub precision_at_20: f64,
    pub failures: usize,
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0) = a.top_left();
    let (bx0, by0) = b.top_left();
    let ix = (ax0 + a.w).min(bx0 + b.w) - ax0.max(bx0);
    let iy = (ay0 + a.h).min(by0 + b.h) - ay0.max(by0);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt()
}

/// Computes the full report. Precision counts frames whose center distance
/// is within the threshold; success counts frames whose IoU strictly
/// exceeds it; the AUC is the plain mean of the sampled success fractions.
pub fn evaluate_ope(pred: &[BBox], truth: &[BBox]) -> Result<EvalReport> {
    if pred.is_empty() {
        return Err(Error::invalid("evaluation input", "no frames"));
    }
    if pred.len() != truth.len() {
        return Err(Error::invalid(
            "evaluation input",
            format!("{} predictions vs {} truth boxes", pred.len(), truth.len()),
        ));
    }
    let n = pred.len() as f64;
    let distances: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| center_distance(p, t))
        .collect();
    let ious: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| iou(p, t)).collect();

    let precision_curve: Vec<(f64, f64)> = (0..PRECISION_STEPS)
        .map(|i| {
            let thr = i as f64;
            let frac = distances.iter().filter(|&&d| d <= thr).count() as f64 / n;
            (thr, frac)
        })
        .collect();
    let success_curve: Vec<(f64, f64)> = (0..SUCCESS_STEPS)
        .map(|i| {
            let thr = i as f64 * 0.05;
            let frac = ious.iter().filter(|&&v| v > thr).count() as f64 / n;
            (thr, frac)
        })
        .collect();
    let auc = success_curve.iter().map(|(_, f)| f).sum::<f64>() / SUCCESS_STEPS as f64;
    let precision_at_20 = precision_curve[20].1;
    let failures = ious.iter().filter(|&&v| v == 0.0).count();
    Ok(EvalReport {
        frames: pred.len(),
        precision_curve,
        success_curve,
        auc,
        precision_at_20,
        failures,
    })
}

impl EvalReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "frames={}\nauc={}\nprecision_at_20={}\nfailures={}\n",
            self.frames, self.auc, self.precision_at_20, self.failures
        )
    }

    pub fn precision_csv(&self) -> String {
        let mut s = String::from("threshold_px,fraction\n");
        for (t, f) in &self.precision_curve {
            s.push_str(&format!("{t},{f}\n"));
        }
        s
    }

    pub fn success_csv(&self) -> String {
        let mut s = String::from("iou_threshold,fraction\n");
        for (t, f) in &self.success_curve {
            s.push_str(&format!("{t},{f}\n"));
        }
        s
    }
}
