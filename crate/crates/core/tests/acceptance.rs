//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers once its assertions hold. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;
use std::time::Instant;

use coordtrack::bbox::BBox;
use coordtrack::config::{FusionMode, ModelConfig};
use coordtrack::decoder::teacher_forcing_logits;
use coordtrack::fusion;
use coordtrack::image::GrayImage;
use coordtrack::loss::{ce_loss, iou, siou_loss};
use coordtrack::metrics::{normp_metric, pre_metric, suc_metric, MetricReport};
use coordtrack::model::{pipeline_grad_check, TrackModel};
use coordtrack::synth::{sample_scene, SynthScene};
use coordtrack::tensor::{opchecks, GradCheckConfig, Tape, Tensor};
use coordtrack::tracker::TrackerState;
use coordtrack::train::{evaluate_on_scenes, train_toy};
use coordtrack::vocab::{CoordVocab, Token};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

// ── Shared toy-training fixtures (criteria 8 and 9) ─────────────────

const TRAIN_SCENES: usize = 200;
const TRAIN_FRAMES: usize = 20;
const HELD_OUT_SCENES: usize = 20;
const HELD_OUT_FRAMES: usize = 30;
const TRAIN_MASTER_SEED: u64 = 7;

fn training_scenes() -> Vec<SynthScene> {
    (0..TRAIN_SCENES as u64)
        .map(|i| sample_scene(TRAIN_MASTER_SEED.wrapping_add(i), TRAIN_FRAMES))
        .collect()
}

fn held_out_scenes() -> Vec<SynthScene> {
    (0..HELD_OUT_SCENES as u64)
        .map(|i| sample_scene(0xde11 + i, HELD_OUT_FRAMES))
        .collect()
}

struct Trained {
    curve: Vec<f64>,
    report: MetricReport,
    train_seconds: f64,
}

fn train_with(fusion: FusionMode) -> Trained {
    let cfg = ModelConfig { fusion, seed: TRAIN_MASTER_SEED, ..ModelConfig::toy() };
    let t0 = Instant::now();
    let (model, curve) = train_toy(&cfg, &training_scenes(), cfg.epochs).expect("training runs");
    let train_seconds = t0.elapsed().as_secs_f64();
    let report = evaluate_on_scenes(&model, &held_out_scenes()).expect("evaluation runs");
    Trained { curve, report, train_seconds }
}

fn trained_mpfm() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| train_with(FusionMode::Mpfm))
}

// ── Criterion 1: gradient integrity ─────────────────────────────────

#[test]
fn criterion_01_gradient_integrity() {
    let t0 = Instant::now();
    let tol = 1e-4;

    let outcomes = opchecks::run_op_gradchecks(1e-5, tol, 0xacce97).expect("battery runs");
    let mut worst: f64 = 0.0;
    for o in &outcomes {
        assert!(o.passed, "{} failed: max rel err {:.3e}", o.name, o.max_rel_err);
        worst = worst.max(o.max_rel_err);
    }

    // Full pipeline at the pinned toy dimensions: encoder 2 layers,
    // width 64, 4 heads; search 64^2, template 32^2; nbins 100;
    // decoder hidden 64.
    let cfg = ModelConfig::toy();
    assert_eq!((cfg.enc_layers, cfg.embed_dim, cfg.enc_heads), (2, 64, 4));
    assert_eq!((cfg.search_size, cfg.template_size), (64, 32));
    assert_eq!((cfg.nbins, cfg.dec_hidden), (100, 64));
    for fusion in [FusionMode::Mpfm, FusionMode::Conf, FusionMode::Addf] {
        let report = pipeline_grad_check(
            &ModelConfig { fusion, ..cfg.clone() },
            0xacce97,
            &GradCheckConfig { eps: 1e-5, tol, probes: 48, seed: 0xacce97 },
        )
        .expect("pipeline check runs");
        assert!(
            report.passed(),
            "pipeline[{fusion}] max rel err {:.3e} at tol {tol:.0e}",
            report.max_rel_err
        );
        worst = worst.max(report.max_rel_err);
    }

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}, budget 5 min");
    println!(
        "ACCEPTANCE 1 PASS: gradient integrity, {} op checks + 3 pipelines, max rel err {:.3e} < 1e-4, {:.1}s",
        outcomes.len(),
        worst,
        elapsed.as_secs_f64()
    );
}

// ── Criterion 2: exact causality ────────────────────────────────────

#[test]
fn criterion_02_causality_bitwise() {
    let cfg = ModelConfig::toy();
    let model = TrackModel::init(cfg.clone(), 21).expect("init");
    let vocab = model.vocab();
    let mut rng = StdRng::seed_from_u64(22);
    let feats = Tensor::from_fn(&[cfg.search_tokens(), cfg.dec_hidden], |_| rng.gen_range(-1.0..1.0));

    // Decoder: perturbing input token j leaves rows < j bit-identical.
    let run = |input: &[Token; 5]| -> Vec<u64> {
        let mut tape = Tape::new();
        let p = tape.register(&model.store);
        let fv = tape.leaf(&feats);
        let logits = teacher_forcing_logits(&mut tape, &p, &cfg, &vocab, fv, input).expect("logits");
        tape.value(logits).iter().map(|v| v.to_bits()).collect()
    };
    let cols = vocab.head_dim();
    for trial in 0..100 {
        let mut base: [Token; 5] = [vocab.cmd_token(), 0, 0, 0, 0];
        for slot in base.iter_mut().skip(1) {
            *slot = rng.gen_range(1..=cfg.nbins);
        }
        let j = rng.gen_range(1..5usize);
        let mut changed = base;
        changed[j] = loop {
            let cand = rng.gen_range(1..=cfg.nbins);
            if cand != base[j] {
                break cand;
            }
        };
        let a = run(&base);
        let b = run(&changed);
        assert_eq!(a[..j * cols], b[..j * cols], "trial {trial}: rows before {j} moved");
        assert!(a[j * cols..] != b[j * cols..], "trial {trial}: perturbation had no effect");
    }

    // Encoder: template outputs bitwise invariant to search content.
    let fixed = Tensor::from_fn(&[1, 32, 32], |_| rng.gen_range(0.0..1.0));
    let dynamic = Tensor::from_fn(&[1, 32, 32], |_| rng.gen_range(0.0..1.0));
    let encode_template_slice = |search: &Tensor| -> Vec<u64> {
        let mut tape = Tape::new();
        let p = tape.register(&model.store);
        let fz = tape.leaf(&coordtrack::model::standardize(&fixed));
        let dz = tape.leaf(&coordtrack::model::standardize(&dynamic));
        let sx = tape.leaf(&coordtrack::model::standardize(search));
        let zf = coordtrack::encoder::patch_embed(&mut tape, &p, &cfg, fz).unwrap();
        let zd = coordtrack::encoder::patch_embed(&mut tape, &p, &cfg, dz).unwrap();
        let xs = coordtrack::encoder::patch_embed(&mut tape, &p, &cfg, sx).unwrap();
        let pos_z = p.var("enc.pos_z").unwrap();
        let pos_x = p.var("enc.pos_x").unwrap();
        let zf = tape.add(zf, pos_z).unwrap();
        let zd = tape.add(zd, pos_z).unwrap();
        let xs = tape.add(xs, pos_x).unwrap();
        let tz = 2 * cfg.template_tokens();
        let mut e = tape.concat(&[zf, zd, xs], 0).unwrap();
        for layer in 0..cfg.enc_layers {
            let vars = coordtrack::encoder::EncLayerVars::resolve(&p, layer).unwrap();
            e = coordtrack::encoder::encoder_layer(&mut tape, e, &vars, cfg.enc_heads, tz).unwrap();
        }
        tape.value(e)[..tz * cfg.embed_dim].iter().map(|v| v.to_bits()).collect()
    };
    let base_search = Tensor::from_fn(&[1, 64, 64], |_| rng.gen_range(0.0..1.0));
    let base_slice = encode_template_slice(&base_search);
    for trial in 0..100 {
        let other = Tensor::from_fn(&[1, 64, 64], |_| rng.gen_range(0.0..1.0));
        let slice = encode_template_slice(&other);
        assert_eq!(base_slice, slice, "trial {trial}: template tokens moved with search content");
    }
    println!("ACCEPTANCE 2 PASS: causality bitwise, 100 decoder + 100 encoder trials");
}

// ── Criterion 3: tokenizer bound ────────────────────────────────────

#[test]
fn criterion_03_tokenizer_bound() {
    let t0 = Instant::now();
    let vocab = CoordVocab::new(4000).expect("vocab");
    let mut rng = StdRng::seed_from_u64(33);
    let bound = 1.0 / (2.0 * 4000.0);
    let mut values: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..=1.0)).collect();
    for &v in &values {
        let token = vocab.quantize(v).expect("quantize");
        let back = vocab.dequantize(token).expect("dequantize");
        // 1e-15 absorbs f64 representation noise at exact bin edges.
        assert!((v - back).abs() <= bound + 1e-15, "v={v}: |{v} - {back}| > {bound}");
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut prev = 0;
    for &v in &values {
        let t = vocab.quantize(v).expect("quantize");
        assert!(t >= prev, "monotonicity violated at v={v}");
        prev = t;
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!(
        "ACCEPTANCE 3 PASS: tokenizer bound 1.25e-4 and monotonicity over 1e5 values, {:.2}s",
        elapsed.as_secs_f64()
    );
}

// ── Criterion 4: shape contracts at full scale ─────────────────────

#[test]
fn criterion_04_shape_contracts_full_scale() {
    let cfg = ModelConfig::default();
    assert_eq!((cfg.embed_dim, cfg.enc_layers, cfg.nbins), (768, 12, 4000));
    let model = TrackModel::init(cfg.clone(), 4).expect("full-scale init");
    let vocab = model.vocab();

    // Token counts: 64 + 64 + 324 = 452.
    assert_eq!(cfg.template_tokens(), 64);
    assert_eq!(cfg.search_tokens(), 324);
    assert_eq!(2 * cfg.template_tokens() + cfg.search_tokens(), 452);

    let mut rng = StdRng::seed_from_u64(44);
    let fixed = Tensor::from_fn(&[1, 128, 128], |_| rng.gen_range(0.0..1.0));
    let dynamic = Tensor::from_fn(&[1, 128, 128], |_| rng.gen_range(0.0..1.0));
    let search = Tensor::from_fn(&[1, 288, 288], |_| rng.gen_range(0.0..1.0));

    let mut tape = Tape::new();
    let p = tape.register(&model.store);
    let fz = tape.leaf(&coordtrack::model::standardize(&fixed));
    let dz = tape.leaf(&coordtrack::model::standardize(&dynamic));
    let sx = tape.leaf(&coordtrack::model::standardize(&search));
    let f_x = coordtrack::encoder::encode(&mut tape, &p, &cfg, fz, dz, sx).expect("encode");
    assert_eq!(tape.shape(f_x), &[324, 768], "f_x shape");

    // MPFM maps C x 18 x 18 -> C x 18 x 18.
    let cn = tape.transpose2(f_x).expect("transpose");
    let chw = tape.reshape(cn, &[768, 18, 18]).expect("reshape");
    let fused = fusion::mpfm(&mut tape, chw, &p).expect("mpfm");
    assert_eq!(tape.shape(fused), &[768, 18, 18], "mpfm shape");

    // Bridge + teacher forcing: 5 x (nbins + 1).
    let flat = tape.reshape(fused, &[768, 324]).expect("reshape");
    let nc = tape.transpose2(flat).expect("transpose");
    let bw = p.var("dec.bridge.w").expect("bridge w");
    let bb = p.var("dec.bridge.b").expect("bridge b");
    let feats = tape.linear(nc, bw, bb).expect("bridge");
    let input = [vocab.cmd_token(), 17, 2890, 1203, 44];
    let logits =
        teacher_forcing_logits(&mut tape, &p, &cfg, &vocab, feats, &input).expect("teacher pass");
    assert_eq!(tape.shape(logits), &[5, 4001], "teacher-forcing logits shape");
    drop(tape);

    // The ablation fusion paths hold the same contract at C = 768.
    for fusion_mode in [FusionMode::Conf, FusionMode::Addf] {
        let m = TrackModel::init(
            ModelConfig { fusion: fusion_mode, ..cfg.clone() },
            5,
        )
        .expect("init");
        let mut tape = Tape::new();
        let p = tape.register(&m.store);
        let x = Tensor::from_fn(&[768, 18, 18], |_| rng.gen_range(-1.0..1.0));
        let v = tape.leaf(&x);
        let ew = p.var("fus.expand.w").expect("expand w");
        let eb = p.var("fus.expand.b").expect("expand b");
        let pyr = fusion::build_pyramid(&mut tape, v, ew, eb).expect("pyramid");
        let out = match fusion_mode {
            FusionMode::Conf => fusion::conf_fusion(&mut tape, &pyr.levels, &p).expect("conf"),
            _ => fusion::addf_fusion(&mut tape, &pyr.levels, &p).expect("addf"),
        };
        assert_eq!(tape.shape(out), &[768, 18, 18], "{fusion_mode} shape");
    }
    println!(
        "ACCEPTANCE 4 PASS: full-scale shapes (452 tokens, f_x 324x768, fusion 768x18x18 for mpfm/conf/addf, logits 5x4001)"
    );
}

// ── Criterion 5: loss properties ────────────────────────────────────

#[test]
fn criterion_05_loss_properties() {
    let mut rng = StdRng::seed_from_u64(55);
    let rand_box = |rng: &mut StdRng| {
        BBox::image_px(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(0.2..6.0),
            rng.gen_range(0.2..6.0),
        )
        .expect("box")
    };

    for _ in 0..200 {
        let b = rand_box(&mut rng);
        assert_eq!(siou_loss(&b, &b), 0.0, "siou at identity");
    }
    for _ in 0..10_000 {
        let a = rand_box(&mut rng);
        let b = rand_box(&mut rng);
        let loss = siou_loss(&a, &b);
        assert!(loss >= 1.0 - iou(&a, &b) - 1e-12, "siou must dominate 1 - IoU");
    }

    let vocab = CoordVocab::new(4000).expect("vocab");
    let uniform = Tensor::zeros(&[5, vocab.head_dim()]);
    let targets: [Token; 5] = [1, 2000, 4000, 123, vocab.end_token()];
    let ce = ce_loss(&uniform, &targets, &vocab).expect("ce");
    assert!((ce - 4001f64.ln()).abs() < 1e-9, "uniform CE {ce} vs ln(4001)");

    // total == ce + siou, bit-for-bit as summed.
    for _ in 0..200 {
        let logits = Tensor::from_fn(&[5, vocab.head_dim()], |_| rng.gen_range(-2.0..2.0));
        let gt = BBox::normalized(0.3, 0.25, 0.3, 0.4).expect("gt");
        let enc = vocab.encode_box(&gt).expect("encode");
        let mut tape = Tape::new();
        let l = tape.leaf(&logits);
        let report =
            coordtrack::loss::total_loss(&mut tape, l, &enc.target, &gt, &vocab).expect("loss");
        assert_eq!(report.total.to_bits(), (report.ce + report.siou).to_bits());
    }
    println!(
        "ACCEPTANCE 5 PASS: siou(b,b)=0, siou >= 1-IoU on 1e4 pairs, uniform CE = ln(4001) +/- 1e-9, total = ce + siou"
    );
}

// ── Criterion 6: template-update state machine ──────────────────────

#[test]
fn criterion_06_template_update_state_machine() {
    let cfg = ModelConfig::toy();
    assert_eq!(cfg.lambda, 0.6);
    assert_eq!(cfg.zu, 25);
    let mut rng = StdRng::seed_from_u64(66);
    let frame = GrayImage::new(200, 200, (0..40_000).map(|_| rng.gen_range(0.0..1.0)).collect())
        .expect("frame");
    let b = BBox::image_px(40.0, 40.0, 20.0, 20.0).expect("box");
    let mut state = TrackerState::init(&frame, &b, &cfg).expect("state");
    state.frame_index = 0;
    state.last_update_frame = 0;

    let script = [(25u32, 0.75), (35, 0.95), (50, 0.55), (51, 0.61)];
    let mut updates = Vec::new();
    for (i, (frame_idx, score)) in script.into_iter().enumerate() {
        // Distinct predicted box per event so a real update visibly
        // replaces the template content.
        let pred = BBox::image_px(50.0 + 10.0 * i as f64, 60.0, 20.0, 20.0).expect("pred");
        state.frame_index = frame_idx;
        let before = state.dynamic_template.clone();
        if state.maybe_update_template(&frame, &pred, score, &cfg).expect("update") {
            updates.push(frame_idx);
            assert_ne!(state.dynamic_template, before, "update must replace the template");
        } else {
            assert_eq!(state.dynamic_template, before, "non-update must not touch the template");
        }
    }
    assert_eq!(updates, vec![25, 51], "exact update frames");
    println!("ACCEPTANCE 6 PASS: scripted updates occur exactly at frames {{25, 51}}");
}

// ── Criterion 7: metric oracles ─────────────────────────────────────

/// Brute-force success AUC: double loop over thresholds and frames.
fn suc_oracle(pred: &[BBox], gt: &[BBox]) -> f64 {
    let mut total = 0.0;
    for i in 0..21 {
        let tau = i as f64 * 0.05;
        let mut hits = 0usize;
        for (p, g) in pred.iter().zip(gt) {
            if iou(p, g) > tau {
                hits += 1;
            }
        }
        total += hits as f64 / pred.len() as f64;
    }
    total / 21.0
}

fn pre_oracle(pred: &[BBox], gt: &[BBox]) -> f64 {
    let mut hits = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let dx = (p.x + p.w / 2.0) - (g.x + g.w / 2.0);
        let dy = (p.y + p.h / 2.0) - (g.y + g.h / 2.0);
        if (dx * dx + dy * dy).sqrt() <= 20.0 {
            hits += 1;
        }
    }
    hits as f64 / pred.len() as f64
}

fn normp_oracle(pred: &[BBox], gt: &[BBox]) -> f64 {
    let mut hits = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let dx = ((p.x + p.w / 2.0) - (g.x + g.w / 2.0)) / g.w;
        let dy = ((p.y + p.h / 2.0) - (g.y + g.h / 2.0)) / g.h;
        if (dx * dx + dy * dy).sqrt() <= 0.2 {
            hits += 1;
        }
    }
    hits as f64 / pred.len() as f64
}

#[test]
fn criterion_07_metric_oracles() {
    // Hand-constructed 10-frame case mixing hits, misses, and partial
    // overlaps, away from threshold boundaries.
    let gt: Vec<BBox> = (0..10)
        .map(|i| BBox::image_px(10.0 + 3.0 * i as f64, 20.0, 16.0, 12.0).expect("gt"))
        .collect();
    let pred: Vec<BBox> = (0..10)
        .map(|i| match i % 4 {
            0 => Ok(gt[i]),                                                  // perfect
            1 => BBox::image_px(gt[i].x + 4.0, gt[i].y + 3.0, 16.0, 12.0),   // overlap
            2 => BBox::image_px(gt[i].x + 30.0, gt[i].y + 25.0, 16.0, 12.0), // miss
            _ => BBox::image_px(gt[i].x - 2.0, gt[i].y + 1.0, 18.0, 10.0),   // resized
        }
        .expect("pred"))
        .collect();

    assert_eq!(suc_metric(&pred, &gt).expect("suc"), suc_oracle(&pred, &gt));
    assert_eq!(pre_metric(&pred, &gt).expect("pre"), pre_oracle(&pred, &gt));
    assert_eq!(normp_metric(&pred, &gt).expect("normp"), normp_oracle(&pred, &gt));

    // Perfect predictions.
    let suc = suc_metric(&gt, &gt).expect("suc");
    assert_eq!(suc, 20.0 / 21.0);
    assert_eq!(pre_metric(&gt, &gt).expect("pre"), 1.0);
    assert_eq!(normp_metric(&gt, &gt).expect("normp"), 1.0);
    println!(
        "ACCEPTANCE 7 PASS: Suc/Pre/NormP equal brute-force oracles; perfect pred scores 20/21 = {suc:.6}"
    );
}

// ── Criterion 8: toy end-to-end training ────────────────────────────

#[test]
fn criterion_08_toy_end_to_end() {
    let trained = trained_mpfm();
    assert!(
        trained.train_seconds < 1800.0,
        "training took {:.0}s, budget 30 min",
        trained.train_seconds
    );
    let first = trained.curve.first().expect("non-empty curve");
    let last = trained.curve.last().expect("non-empty curve");
    assert!(last < first, "loss curve must fall: first {first:.4}, last {last:.4}");
    assert!(
        trained.report.suc >= 0.55,
        "Suc {:.4} below 0.55 (pre {:.4}, normp {:.4})",
        trained.report.suc,
        trained.report.pre,
        trained.report.normp
    );
    assert!(trained.report.pre >= 0.80, "Pre {:.4} below 0.80", trained.report.pre);
    println!(
        "ACCEPTANCE 8 PASS: toy end-to-end, Suc {:.4} >= 0.55, Pre {:.4} >= 0.80, loss {:.3} -> {:.3}, {:.0}s < 30 min",
        trained.report.suc, trained.report.pre, first, last, trained.train_seconds
    );
}

// ── Criterion 9: ablation direction (soft check) ────────────────────

#[test]
fn criterion_09_ablation_direction() {
    let mpfm = trained_mpfm();
    let conf = train_with(FusionMode::Conf);
    let addf = train_with(FusionMode::Addf);

    let (m, c, a) = (mpfm.report.suc, conf.report.suc, addf.report.suc);
    println!(
        "ACCEPTANCE 9 REPORT: Suc mpfm {m:.4} vs conf {c:.4} / addf {a:.4}{}",
        if m >= c && m >= a { " (expected ordering holds)" } else { " (ordering inverted at toy scale)" }
    );
    // Soft check: only fail when mpfm trails BOTH variants badly.
    assert!(
        !(m < c - 0.05 && m < a - 0.05),
        "mpfm Suc {m:.4} trails conf {c:.4} and addf {a:.4} by more than 0.05"
    );
    println!("ACCEPTANCE 9 PASS: mpfm not worse than both ablations by > 0.05 Suc");
}

// ── Criterion 10: CLI determinism ───────────────────────────────────

#[test]
fn criterion_10_cli_determinism() {
    use std::fs;
    use std::process::Command;

    let bin = env!("CARGO_BIN_EXE_coordtrack");
    let root = std::env::temp_dir().join("ct_acceptance_determinism");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).expect("tmp dir");

    let run_ok = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().expect("spawn");
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };

    // synth: identical scene -> byte-identical sequence directories.
    let scene = root.join("scene.cfg");
    fs::write(
        &scene,
        "width = 120\nheight = 90\nframes = 6\nbackground = 0.2\nnoise = 0.04\nseed = 5\n\
         target = 60,45,14,12,0.7,1.0,0.4\n",
    )
    .expect("scene");
    let (seq_a, seq_b) = (root.join("seq_a"), root.join("seq_b"));
    run_ok(&["synth", "--scene", scene.to_str().unwrap(), "--out", seq_a.to_str().unwrap()]);
    run_ok(&["synth", "--scene", scene.to_str().unwrap(), "--out", seq_b.to_str().unwrap()]);
    let mut names: Vec<_> = fs::read_dir(&seq_a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        assert_eq!(
            fs::read(seq_a.join(n)).unwrap(),
            fs::read(seq_b.join(n)).unwrap(),
            "synth output {n:?} not reproducible"
        );
    }

    // train-toy at micro scale: byte-identical weights.
    let cfg = root.join("micro.cfg");
    fs::write(
        &cfg,
        "nbins = 100\ntemplate_size = 32\nsearch_size = 64\npatch = 16\nenc_layers = 1\n\
         embed_dim = 32\nenc_heads = 2\nmlp_ratio = 2\ndec_layers = 1\ndec_hidden = 32\n\
         dec_heads = 4\nepochs = 1\nsamples_per_epoch = 8\nbatch_size = 4\nseed = 11\n",
    )
    .expect("cfg");
    let (w_a, w_b) = (root.join("a.nlmw"), root.join("b.nlmw"));
    for w in [&w_a, &w_b] {
        run_ok(&[
            "train-toy",
            "--config", cfg.to_str().unwrap(),
            "--out-weights", w.to_str().unwrap(),
            "--scenes", "2",
            "--frames", "4",
        ]);
    }
    assert_eq!(fs::read(&w_a).unwrap(), fs::read(&w_b).unwrap(), "weights not reproducible");

    // track: identical prediction files on two runs.
    let (p_a, p_b) = (root.join("pa.txt"), root.join("pb.txt"));
    for p in [&p_a, &p_b] {
        run_ok(&[
            "track",
            "--weights", w_a.to_str().unwrap(),
            "--seq", seq_a.to_str().unwrap(),
            "--out", p.to_str().unwrap(),
        ]);
    }
    assert_eq!(fs::read(&p_a).unwrap(), fs::read(&p_b).unwrap(), "track output not reproducible");

    // eval: identical reports, and stdout identical.
    let (r_a, r_b) = (root.join("ra.txt"), root.join("rb.txt"));
    let gt = seq_a.join("groundtruth_rect.txt");
    let so_a = run_ok(&[
        "eval",
        "--pred", p_a.to_str().unwrap(),
        "--gt", gt.to_str().unwrap(),
        "--report", r_a.to_str().unwrap(),
    ]);
    let so_b = run_ok(&[
        "eval",
        "--pred", p_a.to_str().unwrap(),
        "--gt", gt.to_str().unwrap(),
        "--report", r_b.to_str().unwrap(),
    ]);
    assert_eq!(so_a, so_b);
    assert_eq!(fs::read(&r_a).unwrap(), fs::read(&r_b).unwrap(), "reports not reproducible");

    // gradcheck: stdout identical across runs.
    let g_a = run_ok(&["gradcheck", "--probes", "8"]);
    let g_b = run_ok(&["gradcheck", "--probes", "8"]);
    assert_eq!(g_a, g_b, "gradcheck output not reproducible");

    println!("ACCEPTANCE 10 PASS: synth/train-toy/track/eval/gradcheck bit-reproducible under fixed seeds");
}
