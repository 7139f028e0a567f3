//! Teacher-forced training on synthetic sequences: sample (templates,
//! search, target tokens) sets, average gradients over a batch, and step
//! AdamW with separate encoder / non-encoder learning rates.
//!
//! Forward/backward passes are pure per sample, so a batch fans out over
//! threads; gradients are reduced in sample order to keep runs
//! bit-reproducible regardless of scheduling.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::bbox::{BBox, BoxFrame};
use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::image::GrayImage;
use crate::loss;
use crate::metrics::{evaluate, MetricReport};
use crate::model::TrackModel;
use crate::synth::{gen_sequence, SynthScene};
use crate::tensor::{Tape, Tensor};
use crate::tracker::{crop_search, crop_template, map_box_to_crop, track_sequence};
use crate::vocab::Token;

/// AdamW with decoupled weight decay and two learning-rate groups:
/// `enc.*` parameters train at `lr_encoder`, everything else at `lr_other`.
pub struct AdamW {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self::new()
    }
}

impl AdamW {
    pub fn new() -> Self {
        Self { step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: BTreeMap::new() }
    }

    /// Apply one update from the gradients accumulated in the store.
    pub fn step(&mut self, model: &mut TrackModel) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let cfg = model.cfg.clone();
        for (name, param) in model.store.iter_mut() {
            if !param.trainable {
                continue;
            }
            let Some(grad) = param.grad.as_ref() else { continue };
            let lr = if name.starts_with("enc.") { cfg.lr_encoder } else { cfg.lr_other };
            let (m, v) = self
                .state
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let mut data = param.value.data().to_vec();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + cfg.weight_decay * data[i]);
            }
            param.value = Tensor::new(param.value.shape().to_vec(), data)?;
        }
        Ok(())
    }
}

/// Pre-rendered sequence ready for sampling.
pub struct SequenceData {
    pub frames: Vec<GrayImage>,
    pub ground_truth: Vec<BBox>,
}

pub fn prepare_sequences(scenes: &[SynthScene]) -> Result<Vec<SequenceData>> {
    scenes
        .iter()
        .map(|s| {
            let (frames, ground_truth) = gen_sequence(s)?;
            Ok(SequenceData { frames, ground_truth })
        })
        .collect()
}

/// One teacher-forcing sample: crops plus token views of the target box.
pub struct TrainSample {
    pub fixed: Tensor,
    pub dynamic: Tensor,
    pub search: Tensor,
    pub input: [Token; 5],
    pub target: [Token; 5],
    pub gt_norm: BBox,
}

fn jitter_box(b: &BBox, shift: f64, scale: f64, rng: &mut StdRng) -> BBox {
    let side = (b.w * b.h).sqrt();
    let s = rng.gen_range(-scale..scale).exp();
    let w = b.w * s;
    let h = b.h * s;
    let cx = b.cx() + rng.gen_range(-shift..shift) * side;
    let cy = b.cy() + rng.gen_range(-shift..shift) * side;
    BBox::image_px(cx - w / 2.0, cy - h / 2.0, w, h).expect("jitter keeps extents positive")
}

/// Clamp a crop-normalized box into the valid normalized domain.
fn clamp_normalized(b: &BBox, nbins: u32) -> BBox {
    let min_extent = 1.0 / nbins as f64;
    BBox {
        x: b.x.clamp(0.0, 1.0),
        y: b.y.clamp(0.0, 1.0),
        w: b.w.clamp(min_extent, 1.0),
        h: b.h.clamp(min_extent, 1.0),
        frame: BoxFrame::Normalized,
    }
}

/// Sample (fixed template, dynamic template, search, targets) from the
/// rendered sequences, with crop jitter standing in for imperfect
/// previous-frame predictions.
pub fn build_sample(
    seqs: &[SequenceData],
    cfg: &ModelConfig,
    rng: &mut StdRng,
) -> Result<TrainSample> {
    let vocab = crate::vocab::CoordVocab::new(cfg.nbins)?;
    let seq = &seqs[rng.gen_range(0..seqs.len())];
    let n = seq.frames.len();
    if n < 2 {
        return Err(CoreError::contract("build_sample", "sequences need at least 2 frames"));
    }
    let k = rng.gen_range(1..n);
    let dyn_frame = rng.gen_range(0..k);

    let fixed = crop_template(&seq.frames[0], &seq.ground_truth[0], cfg)?;
    let dyn_box = jitter_box(&seq.ground_truth[dyn_frame], 0.05, 0.1, rng);
    let dynamic = crop_template(&seq.frames[dyn_frame], &dyn_box, cfg)?;

    let prev = jitter_box(&seq.ground_truth[k - 1], 0.12, 0.22, rng);
    let (search, spec) = crop_search(&seq.frames[k], &prev, cfg)?;
    let mapped = map_box_to_crop(&seq.ground_truth[k], &spec)?;
    let gt_norm = clamp_normalized(&mapped, cfg.nbins);
    let enc = vocab.encode_box(&gt_norm)?;

    Ok(TrainSample {
        fixed: fixed.to_tensor(),
        dynamic: dynamic.to_tensor(),
        search: search.to_tensor(),
        input: enc.input,
        target: enc.target,
        gt_norm,
    })
}

/// Per-sample gradients keyed by parameter name, in store order.
type NamedGrads = Vec<(String, Vec<f64>)>;

/// Forward + backward for one sample.
fn sample_grads(model: &TrackModel, sample: &TrainSample) -> Result<(f64, NamedGrads)> {
    let mut tape = Tape::new();
    let params = tape.register(&model.store);
    let feats = model.forward_features(&mut tape, &params, &sample.fixed, &sample.dynamic, &sample.search)?;
    let logits = model.teacher_logits(&mut tape, &params, feats, &sample.input)?;
    let report = loss::total_loss(&mut tape, logits, &sample.target, &sample.gt_norm, &model.vocab())?;
    tape.backward(report.total_var)?;

    let mut grads = Vec::new();
    for (name, param) in model.store.iter() {
        if !param.trainable {
            continue;
        }
        let var = params.var(name)?;
        let g = tape
            .grad(var)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; param.value.numel()]);
        grads.push((name.to_string(), g));
    }
    Ok((report.total, grads))
}

/// Fan a batch out over threads; reduce losses and gradients in sample
/// order so the result is independent of scheduling.
fn batch_grads(model: &TrackModel, samples: &[TrainSample]) -> Result<(f64, NamedGrads)> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(samples.len())
        .max(1);

    let results: Vec<Result<(f64, NamedGrads)>> = if workers == 1 {
        samples.iter().map(|s| sample_grads(model, s)).collect()
    } else {
        let mut slots: Vec<Option<Result<(f64, NamedGrads)>>> =
            (0..samples.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks = slots.chunks_mut(samples.len().div_ceil(workers));
            for (w, chunk) in chunks.enumerate() {
                let start = w * samples.len().div_ceil(workers);
                scope.spawn(move || {
                    for (i, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(sample_grads(model, &samples[start + i]));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("all slots filled")).collect()
    };

    let mut sum_loss = 0.0;
    let mut acc: Option<NamedGrads> = None;
    for r in results {
        let (l, grads) = r?;
        sum_loss += l;
        match &mut acc {
            None => acc = Some(grads),
            Some(acc) => {
                for ((_, a), (_, g)) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
        }
    }
    let scale = 1.0 / samples.len() as f64;
    let mut acc = acc.expect("non-empty batch");
    for (_, g) in acc.iter_mut() {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok((sum_loss * scale, acc))
}

/// Teacher-forced toy training. Returns the trained model and the
/// per-epoch mean loss curve; `epochs == 0` leaves the init weights
/// untouched.
pub fn train_toy(
    cfg: &ModelConfig,
    scenes: &[SynthScene],
    epochs: usize,
) -> Result<(TrackModel, Vec<f64>)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(CoreError::contract("train_toy", "no training scenes"));
    }
    let seqs = prepare_sequences(scenes)?;
    let mut model = TrackModel::init(cfg.clone(), cfg.seed)?;
    let mut opt = AdamW::new();
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ 0x7261696e);
    let mut curve = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut remaining = cfg.samples_per_epoch;
        while remaining > 0 {
            let bs = cfg.batch_size.min(remaining);
            remaining -= bs;
            let samples: Vec<TrainSample> = (0..bs)
                .map(|_| build_sample(&seqs, cfg, &mut rng))
                .collect::<Result<_>>()?;
            let (batch_loss, grads) = batch_grads(&model, &samples)?;
            if !batch_loss.is_finite() {
                return Err(CoreError::Diverged {
                    epoch: epoch + 1,
                    detail: format!("batch loss became {batch_loss}"),
                });
            }
            model.store.zero_grads();
            for (name, g) in &grads {
                model.store.add_grad(name, g)?;
            }
            opt.step(&mut model)?;
            epoch_loss += batch_loss;
            batches += 1;
        }
        curve.push(epoch_loss / batches as f64);
    }
    Ok((model, curve))
}

/// Track every scene with the model and pool all frames into one report.
pub fn evaluate_on_scenes(model: &TrackModel, scenes: &[SynthScene]) -> Result<MetricReport> {
    let seqs = prepare_sequences(scenes)?;
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(seqs.len())
        .max(1);

    let track_one = |seq: &SequenceData| -> Result<Vec<BBox>> {
        let out = track_sequence(model, &seq.frames, &seq.ground_truth[0], &model.cfg)?;
        Ok(out.into_iter().map(|(b, _)| b).collect())
    };

    let all_preds: Vec<Result<Vec<BBox>>> = if workers == 1 {
        seqs.iter().map(track_one).collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<BBox>>>> = (0..seqs.len()).map(|_| None).collect();
        let seqs_ref: &[SequenceData] = &seqs;
        let track_ref = &track_one;
        std::thread::scope(|scope| {
            let per = seqs_ref.len().div_ceil(workers);
            for (w, chunk) in slots.chunks_mut(per).enumerate() {
                let start = w * per;
                scope.spawn(move || {
                    for (i, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(track_ref(&seqs_ref[start + i]));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("all slots filled")).collect()
    };

    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (r, seq) in all_preds.into_iter().zip(&seqs) {
        pred.extend(r?);
        gt.extend(seq.ground_truth.iter().copied());
    }
    evaluate(&pred, &gt)
}
