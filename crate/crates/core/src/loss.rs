//! Training objective: token cross-entropy plus a box-geometry loss over a
//! differentiable soft-box surrogate, and the standalone IoU utilities.
//!
//! The geometry loss combines 1 - IoU with an angle-aware distance cost and
//! a shape cost: with centers c and c', center distance sigma, vertical
//! offset c_h, enclosing extents (C_w, C_h):
//!   Lambda = 1 - 2 sin^2(arcsin(c_h / sigma) - pi/4)
//!   gamma = 2 - Lambda
//!   Delta = sum over x,y of 1 - exp(-gamma * ((dc / C)^2))
//!   Omega = sum over w,h of (1 - exp(-|d| / max))^4
//!   loss = 1 - IoU + (Delta + Omega) / 2
//! Coincident centers (sigma = 0) contribute no angle or distance cost.

use crate::bbox::BBox;
use crate::error::{CoreError, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::vocab::{CoordVocab, Token};

/// Intersection-over-union of two boxes in the same frame.
///
/// Areas run through the same corner arithmetic as the intersection so
/// identical boxes score exactly 1.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax2, ay2, bx2, by2) = (a.x2(), a.y2(), b.x2(), b.y2());
    let ix = (ax2.min(bx2) - a.x.max(b.x)).max(0.0);
    let iy = (ay2.min(by2) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let area_a = (ax2 - a.x) * (ay2 - a.y);
    let area_b = (bx2 - b.x) * (by2 - b.y);
    let union = area_a + area_b - inter;
    inter / union
}

/// A box as four scalar tape variables, in x/y/w/h order.
pub type SoftBox = [Var; 4];

/// Differentiable expectation of bin centers under the per-coordinate
/// softmax over the 4 coordinate positions' logits.
pub fn soft_box(t: &mut Tape, logits4: Var, vocab: &CoordVocab) -> Result<SoftBox> {
    let shape = t.shape(logits4).to_vec();
    if shape.len() != 2 || shape[0] != 4 || shape[1] != vocab.head_dim() {
        return Err(CoreError::contract(
            "soft_box",
            format!("wants [4, {}], got {shape:?}", vocab.head_dim()),
        ));
    }
    let nbins = vocab.nbins() as usize;
    let centers = Tensor::from_fn(&[nbins, 1], |b| (b as f64 + 0.5) / nbins as f64);
    let centers = t.leaf(&centers);
    let mut parts = Vec::with_capacity(4);
    for i in 0..4 {
        let row = t.slice_axis(logits4, 0, i, 1)?;
        let bins = t.slice_axis(row, 1, 0, nbins)?;
        let probs = t.softmax(bins, 1)?;
        let expect = t.matmul(probs, centers)?;
        parts.push(t.reshape(expect, &[1])?);
    }
    Ok([parts[0], parts[1], parts[2], parts[3]])
}

/// Build a SoftBox of constants from a plain box.
pub fn const_box(t: &mut Tape, b: &BBox) -> SoftBox {
    [t.scalar(b.x), t.scalar(b.y), t.scalar(b.w), t.scalar(b.h)]
}

/// IoU over tape scalars.
pub fn iou_var(t: &mut Tape, pred: &SoftBox, gt: &SoftBox) -> Result<Var> {
    let [px, py, pw, ph] = *pred;
    let [gx, gy, gw, gh] = *gt;
    let zero = t.scalar(0.0);
    let px2 = t.add(px, pw)?;
    let py2 = t.add(py, ph)?;
    let gx2 = t.add(gx, gw)?;
    let gy2 = t.add(gy, gh)?;
    let lo_x = t.maximum(px, gx)?;
    let lo_y = t.maximum(py, gy)?;
    let hi_x = t.minimum(px2, gx2)?;
    let hi_y = t.minimum(py2, gy2)?;
    let iw_raw = t.sub(hi_x, lo_x)?;
    let ih_raw = t.sub(hi_y, lo_y)?;
    let iw = t.maximum(iw_raw, zero)?;
    let ih = t.maximum(ih_raw, zero)?;
    let inter = t.mul(iw, ih)?;
    // Areas via the same corner arithmetic; identical boxes hit IoU == 1.
    let pw_c = t.sub(px2, px)?;
    let ph_c = t.sub(py2, py)?;
    let gw_c = t.sub(gx2, gx)?;
    let gh_c = t.sub(gy2, gy)?;
    let pa = t.mul(pw_c, ph_c)?;
    let ga = t.mul(gw_c, gh_c)?;
    let areas = t.add(pa, ga)?;
    let union = t.sub(areas, inter)?;
    t.div(inter, union)
}

// Keeps arcsin off its infinite-derivative endpoint.
const ASIN_CLAMP: f64 = 1.0 - 1e-9;

/// The geometry loss over tape scalars; `gt` may be constants or another
/// differentiable box.
pub fn siou_loss_var(t: &mut Tape, pred: &SoftBox, gt: &SoftBox) -> Result<Var> {
    let [px, py, pw, ph] = *pred;
    let [gx, gy, gw, gh] = *gt;

    let overlap = iou_var(t, pred, gt)?;
    let neg_iou = t.neg(overlap);
    let one_minus_iou = t.add_const(neg_iou, 1.0);

    // Centers and their offsets.
    let half_pw = t.scale(pw, 0.5);
    let half_ph = t.scale(ph, 0.5);
    let half_gw = t.scale(gw, 0.5);
    let half_gh = t.scale(gh, 0.5);
    let pcx = t.add(px, half_pw)?;
    let pcy = t.add(py, half_ph)?;
    let gcx = t.add(gx, half_gw)?;
    let gcy = t.add(gy, half_gh)?;
    let dx = t.sub(gcx, pcx)?;
    let dy = t.sub(gcy, pcy)?;
    let dx2 = t.mul(dx, dx)?;
    let dy2 = t.mul(dy, dy)?;
    let sigma2 = t.add(dx2, dy2)?;

    // Coincident centers: no angle, no distance cost. Branching on the
    // forward value is sound on an eager tape.
    let delta = if t.scalar_value(sigma2) == 0.0 {
        t.scalar(0.0)
    } else {
        let sigma = t.sqrt(sigma2);
        let c_h = t.abs(dy);
        let ratio_raw = t.div(c_h, sigma)?;
        let clamp = t.scalar(ASIN_CLAMP);
        let ratio = t.minimum(ratio_raw, clamp)?;
        let alpha = t.asin(ratio);
        let shifted = t.add_const(alpha, -std::f64::consts::FRAC_PI_4);
        let s = t.sin(shifted);
        let s2 = t.mul(s, s)?;
        let neg2s2 = t.scale(s2, -2.0);
        let lambda = t.add_const(neg2s2, 1.0);
        let neg_lambda = t.neg(lambda);
        let gamma = t.add_const(neg_lambda, 2.0);

        // Enclosing-box extents.
        let px2 = t.add(px, pw)?;
        let py2 = t.add(py, ph)?;
        let gx2 = t.add(gx, gw)?;
        let gy2 = t.add(gy, gh)?;
        let right = t.maximum(px2, gx2)?;
        let left = t.minimum(px, gx)?;
        let top = t.minimum(py, gy)?;
        let bottom = t.maximum(py2, gy2)?;
        let cw = t.sub(right, left)?;
        let ch = t.sub(bottom, top)?;
        let rx_lin = t.div(dx, cw)?;
        let ry_lin = t.div(dy, ch)?;
        let rho_x = t.mul(rx_lin, rx_lin)?;
        let rho_y = t.mul(ry_lin, ry_lin)?;
        let gx_term = term_one_minus_exp_neg(t, gamma, rho_x)?;
        let gy_term = term_one_minus_exp_neg(t, gamma, rho_y)?;
        t.add(gx_term, gy_term)?
    };

    // Shape cost.
    let dw = t.sub(pw, gw)?;
    let dh = t.sub(ph, gh)?;
    let adw = t.abs(dw);
    let adh = t.abs(dh);
    let max_w = t.maximum(pw, gw)?;
    let max_h = t.maximum(ph, gh)?;
    let ww = t.div(adw, max_w)?;
    let wh = t.div(adh, max_h)?;
    let omega_w = shape_term(t, ww)?;
    let omega_h = shape_term(t, wh)?;
    let omega = t.add(omega_w, omega_h)?;

    let costs = t.add(delta, omega)?;
    let half_costs = t.scale(costs, 0.5);
    t.add(one_minus_iou, half_costs)
}

/// `1 - exp(-gamma * rho)`
fn term_one_minus_exp_neg(t: &mut Tape, gamma: Var, rho: Var) -> Result<Var> {
    let prod = t.mul(gamma, rho)?;
    let neg = t.neg(prod);
    let e = t.exp(neg);
    let ne = t.neg(e);
    Ok(t.add_const(ne, 1.0))
}

/// `(1 - exp(-omega))^4`
fn shape_term(t: &mut Tape, omega: Var) -> Result<Var> {
    let neg = t.neg(omega);
    let e = t.exp(neg);
    let ne = t.neg(e);
    let base = t.add_const(ne, 1.0);
    let sq = t.mul(base, base)?;
    t.mul(sq, sq)
}

/// Standalone geometry loss on plain boxes (one shared implementation with
/// the differentiable path).
pub fn siou_loss(pred: &BBox, gt: &BBox) -> f64 {
    let mut t = Tape::new();
    let p = const_box(&mut t, pred);
    let g = const_box(&mut t, gt);
    let loss = siou_loss_var(&mut t, &p, &g).expect("scalar graph on valid boxes");
    t.scalar_value(loss)
}

/// Mean token cross-entropy over the 5 positions `[x, y, w, h, end]`.
pub fn ce_loss_var(
    t: &mut Tape,
    logits: Var,
    targets: &[Token; 5],
    vocab: &CoordVocab,
) -> Result<Var> {
    let shape = t.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != 5 || shape[1] != vocab.head_dim() {
        return Err(CoreError::contract(
            "ce_loss",
            format!("wants [5, {}], got {shape:?}", vocab.head_dim()),
        ));
    }
    let rows: Vec<usize> = targets
        .iter()
        .map(|&tok| vocab.token_row(tok))
        .collect::<Result<_>>()?;
    let per_pos = t.cross_entropy_rows(logits, &rows)?;
    Ok(t.mean_all(per_pos))
}

/// Convenience wrapper returning the scalar value.
pub fn ce_loss(logits: &Tensor, targets: &[Token; 5], vocab: &CoordVocab) -> Result<f64> {
    let mut t = Tape::new();
    let l = t.leaf(logits);
    let v = ce_loss_var(&mut t, l, targets, vocab)?;
    Ok(t.scalar_value(v))
}

/// Both loss terms, their sum, and the per-token log-probabilities.
pub struct LossReport {
    pub ce: f64,
    pub siou: f64,
    pub total: f64,
    pub token_log_probs: Vec<f64>,
    pub ce_var: Var,
    pub siou_var: Var,
    pub total_var: Var,
}

/// Cross-entropy against the target tokens plus the geometry loss between
/// the soft box read off the coordinate logits and the ground truth.
pub fn total_loss(
    t: &mut Tape,
    logits: Var,
    targets: &[Token; 5],
    gt_box: &BBox,
    vocab: &CoordVocab,
) -> Result<LossReport> {
    if gt_box.frame != crate::bbox::BoxFrame::Normalized {
        return Err(CoreError::contract("total_loss", "ground-truth box must be normalized"));
    }
    let ce_var = ce_loss_var(t, logits, targets, vocab)?;

    let coord_logits = t.slice_axis(logits, 0, 0, 4)?;
    let pred = soft_box(t, coord_logits, vocab)?;
    let gt = const_box(t, gt_box);
    let siou_var = siou_loss_var(t, &pred, &gt)?;
    let total_var = t.add(ce_var, siou_var)?;

    // log p(target_t) = -ce_t; recover from the per-row CE values.
    let rows: Vec<usize> = targets.iter().map(|&tok| vocab.token_row(tok)).collect::<Result<_>>()?;
    let per_pos = t.cross_entropy_rows(logits, &rows)?;
    let token_log_probs = t.value(per_pos).iter().map(|&v| -v).collect();

    Ok(LossReport {
        ce: t.scalar_value(ce_var),
        siou: t.scalar_value(siou_var),
        total: t.scalar_value(total_var),
        token_log_probs,
        ce_var,
        siou_var,
        total_var,
    })
}
