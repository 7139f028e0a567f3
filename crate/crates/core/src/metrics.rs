//! Benchmark-style evaluation: success AUC over an IoU threshold sweep,
//! 20px center-error precision, and box-size-normalized precision.

use crate::bbox::BBox;
use crate::error::{CoreError, Result};
use crate::loss::iou;

/// Thresholds tau = 0.00, 0.05, ..., 1.00 with strict `IoU > tau`.
pub const SUC_THRESHOLDS: usize = 21;
pub const PRE_THRESHOLD_PX: f64 = 20.0;
pub const NORMP_THRESHOLD: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct MetricReport {
    pub suc: f64,
    pub pre: f64,
    pub normp: f64,
    pub per_frame_iou: Vec<f64>,
    pub per_frame_center_err: Vec<f64>,
    pub per_frame_norm_center_err: Vec<f64>,
}

fn check_lengths(op: &'static str, pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(CoreError::contract(
            op,
            format!("{} predictions vs {} ground-truth boxes", pred.len(), gt.len()),
        ));
    }
    if pred.is_empty() {
        return Err(CoreError::contract(op, "empty sequences"));
    }
    Ok(())
}

/// AUC of the success plot: mean over the threshold sweep of the fraction
/// of frames whose IoU strictly exceeds the threshold.
pub fn suc_metric(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    check_lengths("suc_metric", pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let mut acc = 0.0;
    for i in 0..SUC_THRESHOLDS {
        let tau = i as f64 * 0.05;
        let hits = ious.iter().filter(|&&v| v > tau).count();
        acc += hits as f64 / ious.len() as f64;
    }
    Ok(acc / SUC_THRESHOLDS as f64)
}

/// Fraction of frames whose center error is at most 20 px.
pub fn pre_metric(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    check_lengths("pre_metric", pred, gt)?;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| p.center_distance(g) <= PRE_THRESHOLD_PX)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

fn norm_center_err(p: &BBox, g: &BBox) -> f64 {
    let dx = (p.cx() - g.cx()) / g.w;
    let dy = (p.cy() - g.cy()) / g.h;
    (dx * dx + dy * dy).sqrt()
}

/// Fraction of frames whose center error, normalized per axis by the
/// ground-truth extents, is at most 0.2.
pub fn normp_metric(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    check_lengths("normp_metric", pred, gt)?;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| norm_center_err(p, g) <= NORMP_THRESHOLD)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn evaluate(pred: &[BBox], gt: &[BBox]) -> Result<MetricReport> {
    check_lengths("evaluate", pred, gt)?;
    Ok(MetricReport {
        suc: suc_metric(pred, gt)?,
        pre: pre_metric(pred, gt)?,
        normp: normp_metric(pred, gt)?,
        per_frame_iou: pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect(),
        per_frame_center_err: pred.iter().zip(gt).map(|(p, g)| p.center_distance(g)).collect(),
        per_frame_norm_center_err: pred.iter().zip(gt).map(|(p, g)| norm_center_err(p, g)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxes(specs: &[(f64, f64, f64, f64)]) -> Vec<BBox> {
        specs.iter().map(|&(x, y, w, h)| BBox::image_px(x, y, w, h).unwrap()).collect()
    }

    #[test]
    fn perfect_prediction_scores() {
        let gt = boxes(&[(10.0, 10.0, 20.0, 20.0); 10]);
        let suc = suc_metric(&gt, &gt).unwrap();
        // IoU 1.0 beats every threshold except the strict tau = 1.0.
        assert!((suc - 20.0 / 21.0).abs() < 1e-12);
        assert_eq!(pre_metric(&gt, &gt).unwrap(), 1.0);
        assert_eq!(normp_metric(&gt, &gt).unwrap(), 1.0);
    }

    #[test]
    fn zero_overlap_scores_zero() {
        let gt = boxes(&[(10.0, 10.0, 5.0, 5.0); 4]);
        let pred = boxes(&[(100.0, 100.0, 5.0, 5.0); 4]);
        assert_eq!(suc_metric(&pred, &gt).unwrap(), 0.0);
        assert_eq!(pre_metric(&pred, &gt).unwrap(), 0.0);
        assert_eq!(normp_metric(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn thirty_px_error_fails_pre() {
        let gt = boxes(&[(50.0, 50.0, 10.0, 10.0)]);
        let pred = boxes(&[(80.0, 50.0, 10.0, 10.0)]);
        assert_eq!(pre_metric(&pred, &gt).unwrap(), 0.0);
        // 19 px passes.
        let close = boxes(&[(69.0, 50.0, 10.0, 10.0)]);
        assert_eq!(pre_metric(&close, &gt).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let gt = boxes(&[(0.0, 0.0, 5.0, 5.0); 3]);
        let pred = boxes(&[(0.0, 0.0, 5.0, 5.0); 2]);
        assert!(suc_metric(&pred, &gt).is_err());
        assert!(evaluate(&pred, &gt).is_err());
    }

    #[test]
    fn report_arrays_match_frame_count() {
        let gt = boxes(&[(10.0, 10.0, 10.0, 10.0); 6]);
        let pred = boxes(&[(12.0, 11.0, 10.0, 10.0); 6]);
        let r = evaluate(&pred, &gt).unwrap();
        assert_eq!(r.per_frame_iou.len(), 6);
        assert_eq!(r.per_frame_center_err.len(), 6);
        assert_eq!(r.per_frame_norm_center_err.len(), 6);
        for v in [r.suc, r.pre, r.normp] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
