//! Per-frame tracking: crop geometry around the previous box, coordinate
//! mapping between crop and image frames, the score evaluator, and the
//! dynamic-template update state machine.

use crate::bbox::{BBox, BoxFrame};
use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::image::GrayImage;
use crate::model::TrackModel;
use crate::tensor::Tensor;
use crate::vocab::{CoordVocab, Token};

/// Geometry of one square crop, kept for mapping predictions back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSpec {
    pub center: (f64, f64),
    pub side: f64,
    pub out_size: usize,
}

impl CropSpec {
    pub fn scale(&self) -> f64 {
        self.out_size as f64 / self.side
    }

    fn origin(&self) -> (f64, f64) {
        (self.center.0 - self.side / 2.0, self.center.1 - self.side / 2.0)
    }
}

/// Square template crop with area `template_side_factor^2` times the box,
/// resized to the configured template size.
pub fn crop_template(frame: &GrayImage, b: &BBox, cfg: &ModelConfig) -> Result<GrayImage> {
    let side = cfg.template_side_factor * (b.w * b.h).sqrt();
    frame.crop_resize((b.cx(), b.cy()), side, cfg.template_size)
}

/// Square search crop with side `search_side_factor * sqrt(w*h)` centered
/// on the previous box, plus the spec needed to invert the mapping.
pub fn crop_search(frame: &GrayImage, prev: &BBox, cfg: &ModelConfig) -> Result<(GrayImage, CropSpec)> {
    let side = cfg.search_side_factor * (prev.w * prev.h).sqrt();
    let spec = CropSpec { center: (prev.cx(), prev.cy()), side, out_size: cfg.search_size };
    let img = frame.crop_resize(spec.center, side, cfg.search_size)?;
    Ok((img, spec))
}

/// Normalized crop coordinates -> image pixels, clamped to the frame with
/// at least one pixel of extent.
pub fn map_box_to_image(b: &BBox, spec: &CropSpec, frame_w: usize, frame_h: usize) -> Result<BBox> {
    if b.frame != BoxFrame::Normalized {
        return Err(CoreError::contract("map_box_to_image", format!("wants normalized, got {:?}", b.frame)));
    }
    let (ox, oy) = spec.origin();
    let x = ox + b.x * spec.side;
    let y = oy + b.y * spec.side;
    let w = b.w * spec.side;
    let h = b.h * spec.side;
    clamp_to_frame(x, y, w, h, frame_w as f64, frame_h as f64)
}

fn clamp_to_frame(x: f64, y: f64, w: f64, h: f64, fw: f64, fh: f64) -> Result<BBox> {
    let w = w.clamp(1.0, fw);
    let h = h.clamp(1.0, fh);
    let x = x.clamp(0.0, fw - w);
    let y = y.clamp(0.0, fh - h);
    BBox::image_px(x, y, w, h)
}

/// Image pixels -> normalized crop coordinates (no clamping; the caller
/// quantizes, which clamps into `[0, 1]`).
pub fn map_box_to_crop(b: &BBox, spec: &CropSpec) -> Result<BBox> {
    if b.frame != BoxFrame::ImagePx {
        return Err(CoreError::contract("map_box_to_crop", format!("wants image-px, got {:?}", b.frame)));
    }
    let (ox, oy) = spec.origin();
    // Values may land outside [0, 1] when the target sticks out of the
    // crop; quantization clamps them downstream. Validate through the
    // CropPx frame, then relabel.
    let raw = BBox::new(
        (b.x - ox) / spec.side,
        (b.y - oy) / spec.side,
        b.w / spec.side,
        b.h / spec.side,
        BoxFrame::CropPx,
    )?;
    Ok(BBox { frame: BoxFrame::Normalized, ..raw })
}

/// Mean of the per-token softmax maxima.
pub fn score_evaluator(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(CoreError::contract("score_evaluator", "no scores"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mutable per-sequence tracking state.
#[derive(Clone, Debug)]
pub struct TrackerState {
    pub fixed_template: GrayImage,
    pub dynamic_template: GrayImage,
    pub last_box: BBox,
    pub frame_index: u32,
    pub last_update_frame: u32,
    pub lambda: f64,
    pub zu: u32,
}

impl TrackerState {
    /// Initialize from the first frame: both templates start identical.
    pub fn init(frame: &GrayImage, init_box: &BBox, cfg: &ModelConfig) -> Result<Self> {
        let template = crop_template(frame, init_box, cfg)?;
        Ok(Self {
            fixed_template: template.clone(),
            dynamic_template: template,
            last_box: *init_box,
            frame_index: 1,
            last_update_frame: 1,
            lambda: cfg.lambda,
            zu: cfg.zu,
        })
    }

    /// Dynamic-template update gate: both the interval and the score
    /// threshold must pass; the fixed template never changes.
    pub fn maybe_update_template(
        &mut self,
        frame: &GrayImage,
        pred_box: &BBox,
        score: f64,
        cfg: &ModelConfig,
    ) -> Result<bool> {
        let interval_met = self.frame_index - self.last_update_frame >= self.zu;
        let score_met = score > self.lambda;
        if interval_met && score_met {
            self.dynamic_template = crop_template(frame, pred_box, cfg)?;
            self.last_update_frame = self.frame_index;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

/// Anything that predicts box tokens from (fixed, dynamic, search) crops.
/// The real model implements it; tests use stubs.
pub trait Predictor {
    fn predict_tokens(
        &self,
        fixed: &Tensor,
        dynamic: &Tensor,
        search: &Tensor,
    ) -> Result<([Token; 4], [f64; 4])>;

    fn vocab(&self) -> CoordVocab;
}

impl Predictor for TrackModel {
    fn predict_tokens(
        &self,
        fixed: &Tensor,
        dynamic: &Tensor,
        search: &Tensor,
    ) -> Result<([Token; 4], [f64; 4])> {
        self.predict(fixed, dynamic, search)
    }

    fn vocab(&self) -> CoordVocab {
        TrackModel::vocab(self)
    }
}

/// One tracking step: crop, run the model, map the prediction back,
/// apply the update policy, advance the state.
pub fn track_frame(
    state: &mut TrackerState,
    model: &impl Predictor,
    frame: &GrayImage,
    cfg: &ModelConfig,
) -> Result<(BBox, f64)> {
    let (search, spec) = crop_search(frame, &state.last_box, cfg)?;
    let fixed = state.fixed_template.to_tensor();
    let dynamic = state.dynamic_template.to_tensor();
    let (tokens, scores) = model.predict_tokens(&fixed, &dynamic, &search.to_tensor())?;

    state.frame_index += 1;
    let vocab = model.vocab();
    let (pred_box, score) = match vocab.decode_tokens(&tokens) {
        Ok(norm_box) => {
            let mapped = map_box_to_image(&norm_box, &spec, frame.width(), frame.height())?;
            (mapped, score_evaluator(&scores)?)
        }
        // Degenerate generation: hold the previous box, report zero score.
        Err(CoreError::DegenerateDecode { .. }) => (state.last_box, 0.0),
        Err(e) => return Err(e),
    };

    state.maybe_update_template(frame, &pred_box, score, cfg)?;
    state.last_box = pred_box;
    Ok((pred_box, score))
}

/// Track a whole sequence; frame 1's output is the init box itself.
pub fn track_sequence(
    model: &impl Predictor,
    frames: &[GrayImage],
    init_box: &BBox,
    cfg: &ModelConfig,
) -> Result<Vec<(BBox, f64)>> {
    if frames.is_empty() {
        return Err(CoreError::contract("track_sequence", "no frames"));
    }
    let mut state = TrackerState::init(&frames[0], init_box, cfg)?;
    let mut out = Vec::with_capacity(frames.len());
    out.push((*init_box, 1.0));
    for frame in &frames[1..] {
        out.push(track_frame(&mut state, model, frame, cfg)?);
    }
    Ok(out)
}
