//! Causal transformer decoder: masked self-attention over the coordinate
//! token stream, cross-attention into the search features, and a
//! three-layer perceptron head over the shared vocabulary.
//!
//! At inference the argmax runs over the coordinate bins only; the end row
//! exists as a training target and is never sampled.

use crate::config::ModelConfig;
use crate::encoder::{multi_head_attention, sinusoid_table, AttnWeights, LAYER_NORM_EPS};
use crate::error::{CoreError, Result};
use crate::tensor::{Tape, TapeParams, Tensor, Var, ATTN_MASK_SENTINEL};
use crate::vocab::{CoordVocab, Token};

/// Upper-triangular mask: 0 on and below the diagonal, a large negative
/// sentinel above it.
pub fn causal_mask(t_len: usize) -> Tensor {
    Tensor::from_fn(&[t_len, t_len], |i| {
        let (row, col) = (i / t_len, i % t_len);
        if col > row {
            ATTN_MASK_SENTINEL
        } else {
            0.0
        }
    })
}

pub struct DecLayerVars {
    pub norm1_g: Var,
    pub norm1_b: Var,
    pub self_attn: AttnWeights,
    pub norm2_g: Var,
    pub norm2_b: Var,
    pub cross_q_w: Var,
    pub cross_q_b: Var,
    pub cross_kv_w: Var,
    pub cross_kv_b: Var,
    pub cross_proj_w: Var,
    pub cross_proj_b: Var,
    pub norm3_g: Var,
    pub norm3_b: Var,
    pub mlp1_w: Var,
    pub mlp1_b: Var,
    pub mlp2_w: Var,
    pub mlp2_b: Var,
}

impl DecLayerVars {
    pub fn resolve(p: &TapeParams, layer: usize) -> Result<Self> {
        let n = |suffix: &str| format!("dec.layer{layer}.{suffix}");
        Ok(Self {
            norm1_g: p.var(&n("norm1.g"))?,
            norm1_b: p.var(&n("norm1.b"))?,
            self_attn: AttnWeights {
                qkv_w: p.var(&n("qkv.w"))?,
                qkv_b: p.var(&n("qkv.b"))?,
                proj_w: p.var(&n("proj.w"))?,
                proj_b: p.var(&n("proj.b"))?,
            },
            norm2_g: p.var(&n("norm2.g"))?,
            norm2_b: p.var(&n("norm2.b"))?,
            cross_q_w: p.var(&n("cross_q.w"))?,
            cross_q_b: p.var(&n("cross_q.b"))?,
            cross_kv_w: p.var(&n("cross_kv.w"))?,
            cross_kv_b: p.var(&n("cross_kv.b"))?,
            cross_proj_w: p.var(&n("cross_proj.w"))?,
            cross_proj_b: p.var(&n("cross_proj.b"))?,
            norm3_g: p.var(&n("norm3.g"))?,
            norm3_b: p.var(&n("norm3.b"))?,
            mlp1_w: p.var(&n("mlp1.w"))?,
            mlp1_b: p.var(&n("mlp1.b"))?,
            mlp2_w: p.var(&n("mlp2.w"))?,
            mlp2_b: p.var(&n("mlp2.b"))?,
        })
    }
}

/// One pre-norm decoder layer: masked self-attention, cross-attention into
/// `feats`, feed-forward; residuals around each block.
pub fn decoder_layer(
    t: &mut Tape,
    tokens: Var,
    feats: Var,
    vars: &DecLayerVars,
    heads: usize,
    mask: Var,
) -> Result<Var> {
    let width = t.shape(tokens)[1];
    if t.shape(feats)[1] != width {
        return Err(CoreError::ShapeMismatch {
            op: "decoder_layer",
            lhs: t.shape(tokens).to_vec(),
            rhs: t.shape(feats).to_vec(),
        });
    }

    // Masked self-attention.
    let n1 = t.layer_norm(tokens, vars.norm1_g, vars.norm1_b, LAYER_NORM_EPS)?;
    let qkv = t.linear(n1, vars.self_attn.qkv_w, vars.self_attn.qkv_b)?;
    let q = t.slice_axis(qkv, 1, 0, width)?;
    let k = t.slice_axis(qkv, 1, width, width)?;
    let v = t.slice_axis(qkv, 1, 2 * width, width)?;
    let sa = multi_head_attention(t, q, k, v, heads, Some(mask))?;
    let sa = t.linear(sa, vars.self_attn.proj_w, vars.self_attn.proj_b)?;
    let a = t.add(sa, tokens)?;

    // Cross-attention into the TIR features.
    let n2 = t.layer_norm(a, vars.norm2_g, vars.norm2_b, LAYER_NORM_EPS)?;
    let q = t.linear(n2, vars.cross_q_w, vars.cross_q_b)?;
    let kv = t.linear(feats, vars.cross_kv_w, vars.cross_kv_b)?;
    let k = t.slice_axis(kv, 1, 0, width)?;
    let v = t.slice_axis(kv, 1, width, width)?;
    let ca = multi_head_attention(t, q, k, v, heads, None)?;
    let ca = t.linear(ca, vars.cross_proj_w, vars.cross_proj_b)?;
    let b = t.add(ca, a)?;

    // Feed-forward.
    let n3 = t.layer_norm(b, vars.norm3_g, vars.norm3_b, LAYER_NORM_EPS)?;
    let hidden = t.linear(n3, vars.mlp1_w, vars.mlp1_b)?;
    let act = t.gelu(hidden);
    let mlp = t.linear(act, vars.mlp2_w, vars.mlp2_b)?;
    t.add(mlp, b)
}

/// Embed a token prefix and add the fixed sinusoidal position table.
fn embed_tokens(t: &mut Tape, p: &TapeParams, cfg: &ModelConfig, tokens: &[Token]) -> Result<Var> {
    let table = p.var("dec.embed")?;
    let ids: Vec<usize> = tokens.iter().map(|&tok| tok as usize).collect();
    let embedded = t.embed(table, &ids)?;
    let pos = sinusoid_table(tokens.len(), cfg.dec_hidden);
    let pos_var = t.leaf(&pos);
    t.add(embedded, pos_var)
}

/// Run the decoder stack over a token prefix; returns `[T, hidden]`.
pub fn decode_stack(
    t: &mut Tape,
    p: &TapeParams,
    cfg: &ModelConfig,
    feats: Var,
    tokens: &[Token],
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(CoreError::contract("decode_stack", "empty token prefix"));
    }
    let mask = causal_mask(tokens.len());
    let mask_var = t.leaf(&mask);
    let mut x = embed_tokens(t, p, cfg, tokens)?;
    for layer in 0..cfg.dec_layers {
        let vars = DecLayerVars::resolve(p, layer)?;
        x = decoder_layer(t, x, feats, &vars, cfg.dec_heads, mask_var)?;
    }
    Ok(x)
}

/// Three-layer perceptron head over the vocabulary rows.
pub fn head_logits(t: &mut Tape, p: &TapeParams, x: Var) -> Result<Var> {
    let h1 = t.linear(x, p.var("dec.head.1.w")?, p.var("dec.head.1.b")?)?;
    let h1 = t.gelu(h1);
    let h2 = t.linear(h1, p.var("dec.head.2.w")?, p.var("dec.head.2.b")?)?;
    let h2 = t.gelu(h2);
    t.linear(h2, p.var("dec.head.3.w")?, p.var("dec.head.3.b")?)
}

/// One teacher-forced pass over `[cmd, x, y, w, h]`; logits for all five
/// target positions `[x, y, w, h, end]` in parallel.
pub fn teacher_forcing_logits(
    t: &mut Tape,
    p: &TapeParams,
    cfg: &ModelConfig,
    vocab: &CoordVocab,
    feats: Var,
    input: &[Token; 5],
) -> Result<Var> {
    if input[0] != vocab.cmd_token() {
        return Err(CoreError::contract(
            "teacher_forcing_logits",
            format!("input must start with cmd, got {}", input[0]),
        ));
    }
    let x = decode_stack(t, p, cfg, feats, input)?;
    head_logits(t, p, x)
}

/// Greedy argmax over the coordinate bins of one logit row, with the
/// renormalized softmax confidence of the chosen bin. Ties break toward
/// the lowest token id.
pub fn argmax_bins(logits_row: &[f64], vocab: &CoordVocab) -> (Token, f64) {
    let nbins = vocab.nbins() as usize;
    debug_assert!(logits_row.len() >= nbins);
    let bins = &logits_row[..nbins];
    let mut best = 0usize;
    for (i, &v) in bins.iter().enumerate() {
        if v > bins[best] {
            best = i;
        }
    }
    let max = bins[best];
    let z: f64 = bins.iter().map(|&v| (v - max).exp()).sum();
    (best as Token + 1, 1.0 / z)
}

/// Generation loop decoupled from the model: `step` maps the current token
/// prefix to the last position's logit row.
pub fn greedy_decode_with(
    vocab: &CoordVocab,
    mut step: impl FnMut(&[Token]) -> Result<Vec<f64>>,
) -> Result<([Token; 4], [f64; 4])> {
    let mut prefix = vec![vocab.cmd_token()];
    let mut tokens = [0 as Token; 4];
    let mut scores = [0.0f64; 4];
    for slot in 0..4 {
        let row = step(&prefix)?;
        if row.len() != vocab.head_dim() {
            return Err(CoreError::contract(
                "greedy_decode",
                format!("logit row has {} entries, head dim is {}", row.len(), vocab.head_dim()),
            ));
        }
        let (token, score) = argmax_bins(&row, vocab);
        tokens[slot] = token;
        scores[slot] = score;
        prefix.push(token);
    }
    Ok((tokens, scores))
}

/// Greedy decode against real decoder weights on the given tape.
pub fn greedy_decode(
    t: &mut Tape,
    p: &TapeParams,
    cfg: &ModelConfig,
    vocab: &CoordVocab,
    feats: Var,
) -> Result<([Token; 4], [f64; 4])> {
    greedy_decode_with(vocab, |prefix| {
        let x = decode_stack(t, p, cfg, feats, prefix)?;
        let logits = head_logits(t, p, x)?;
        let cols = t.shape(logits)[1];
        let rows = t.shape(logits)[0];
        Ok(t.value(logits)[(rows - 1) * cols..].to_vec())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrackModel;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_model(seed: u64) -> TrackModel {
        TrackModel::init(ModelConfig::toy(), seed).unwrap()
    }

    fn rand_feats(cfg: &ModelConfig, rng: &mut StdRng) -> Tensor {
        Tensor::from_fn(&[cfg.search_tokens(), cfg.dec_hidden], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn causal_mask_layout() {
        let m1 = causal_mask(1);
        assert_eq!(m1.data(), &[0.0]);
        let m3 = causal_mask(3);
        for r in 0..3 {
            for c in 0..3 {
                let v = m3.data()[r * 3 + c];
                if c > r {
                    assert!(v <= -1e29);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn masked_softmax_gives_zero_weight_to_future() {
        let mut tape = Tape::new();
        let mut rng = StdRng::seed_from_u64(1);
        let scores = Tensor::from_fn(&[4, 4], |_| rng.gen_range(-3.0..3.0));
        let s = tape.leaf(&scores);
        let m = causal_mask(4);
        let mv = tape.leaf(&m);
        let masked = tape.add(s, mv).unwrap();
        let probs = tape.softmax(masked, 1).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let p = tape.value(probs)[r * 4 + c];
                if c > r {
                    assert_eq!(p, 0.0, "future weight must be exactly zero");
                } else {
                    assert!(p > 0.0);
                }
            }
        }
    }

    #[test]
    fn zeroed_projections_make_decoder_layer_identity() {
        let cfg = ModelConfig::toy();
        let mut model = toy_model(3);
        let d = cfg.dec_hidden;
        for name in ["proj", "cross_proj", "mlp2"] {
            let rows = if name == "mlp2" { d * cfg.mlp_ratio } else { d };
            model.store.set_value(&format!("dec.layer0.{name}.w"), Tensor::zeros(&[rows, d])).unwrap();
            model.store.set_value(&format!("dec.layer0.{name}.b"), Tensor::zeros(&[d])).unwrap();
        }
        let mut rng = StdRng::seed_from_u64(4);
        let toks = Tensor::from_fn(&[5, d], |_| rng.gen_range(-1.0..1.0));
        let feats = rand_feats(&cfg, &mut rng);
        let mut tape = Tape::new();
        let p = tape.register(&model.store);
        let vars = DecLayerVars::resolve(&p, 0).unwrap();
        let tv = tape.leaf(&toks);
        let fv = tape.leaf(&feats);
        let mask = causal_mask(5);
        let mv = tape.leaf(&mask);
        let out = decoder_layer(&mut tape, tv, fv, &vars, cfg.dec_heads, mv).unwrap();
        assert_eq!(tape.value(out), toks.data());
    }

    #[test]
    fn perturbing_later_tokens_leaves_earlier_outputs_bitwise_unchanged() {
        let cfg = ModelConfig::toy();
        let model = toy_model(5);
        let vocab = model.vocab();
        let mut rng = StdRng::seed_from_u64(6);
        let feats = rand_feats(&cfg, &mut rng);

        let run = |input: &[Token; 5]| -> Vec<f64> {
            let mut tape = Tape::new();
            let p = tape.register(&model.store);
            let fv = tape.leaf(&feats);
            let logits =
                teacher_forcing_logits(&mut tape, &p, &cfg, &vocab, fv, input).unwrap();
            tape.value(logits).to_vec()
        };

        let base: [Token; 5] = [vocab.cmd_token(), 10, 20, 30, 40];
        let out_base = run(&base);
        let cols = vocab.head_dim();
        for j in 1..5usize {
            let mut changed = base;
            changed[j] = 77;
            let out = run(&changed);
            // Rows before j depend only on inputs at positions < j.
            for r in 0..j {
                for c in 0..cols {
                    assert_eq!(
                        out_base[r * cols + c].to_bits(),
                        out[r * cols + c].to_bits(),
                        "row {r} changed after perturbing input {j}"
                    );
                }
            }
            // Later rows must actually move.
            assert!(
                (j..5).any(|r| (0..cols).any(|c| out_base[r * cols + c] != out[r * cols + c])),
                "perturbing input {j} changed nothing downstream"
            );
        }
    }

    #[test]
    fn teacher_forcing_matches_sequential_steps_exactly() {
        let cfg = ModelConfig::toy();
        let model = toy_model(7);
        let vocab = model.vocab();
        let mut rng = StdRng::seed_from_u64(8);
        let feats = rand_feats(&cfg, &mut rng);
        let input: [Token; 5] = [vocab.cmd_token(), 3, 97, 55, 12];

        let mut tape = Tape::new();
        let p = tape.register(&model.store);
        let fv = tape.leaf(&feats);
        let full = teacher_forcing_logits(&mut tape, &p, &cfg, &vocab, fv, &input).unwrap();
        let cols = vocab.head_dim();
        let full_vals = tape.value(full).to_vec();

        for t_len in 1..=5usize {
            let prefix = &input[..t_len];
            let x = decode_stack(&mut tape, &p, &cfg, fv, prefix).unwrap();
            let logits = head_logits(&mut tape, &p, x).unwrap();
            let row = &tape.value(logits)[(t_len - 1) * cols..t_len * cols];
            let want = &full_vals[(t_len - 1) * cols..t_len * cols];
            for (a, b) in row.iter().zip(want) {
                assert_eq!(a.to_bits(), b.to_bits(), "prefix length {t_len}");
            }
        }
    }

    #[test]
    fn greedy_stub_follows_fixed_logits() {
        let vocab = CoordVocab::new(100).unwrap();
        // Stub head: always favor token 7 (row 6).
        let (tokens, scores) = greedy_decode_with(&vocab, |_prefix| {
            let mut row = vec![0.0; vocab.head_dim()];
            row[6] = 10.0;
            Ok(row)
        })
        .unwrap();
        assert_eq!(tokens, [7, 7, 7, 7]);
        // Score equals the softmax of the chosen row over the bins.
        let z: f64 = (0..100).map(|i| if i == 6 { 1.0 } else { (-10.0f64).exp() }).sum();
        for s in scores {
            assert!((s - 1.0 / z).abs() < 1e-12);
            assert!(s > 0.0 && s <= 1.0);
        }
    }

    #[test]
    fn greedy_ties_break_to_lowest_token() {
        let vocab = CoordVocab::new(10).unwrap();
        let (tokens, _) = greedy_decode_with(&vocab, |_| Ok(vec![1.0; vocab.head_dim()])).unwrap();
        assert_eq!(tokens, [1, 1, 1, 1]);
    }

    #[test]
    fn greedy_never_emits_special_tokens_and_is_deterministic() {
        let cfg = ModelConfig::toy();
        let model = toy_model(9);
        let vocab = model.vocab();
        let mut rng = StdRng::seed_from_u64(10);
        let feats = rand_feats(&cfg, &mut rng);
        let run = || {
            let mut tape = Tape::new();
            let p = tape.register(&model.store);
            let fv = tape.leaf(&feats);
            greedy_decode(&mut tape, &p, &cfg, &vocab, fv).unwrap()
        };
        let (tok_a, score_a) = run();
        let (tok_b, score_b) = run();
        assert_eq!(tok_a, tok_b);
        for (a, b) in score_a.iter().zip(&score_b) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for t in tok_a {
            assert!(vocab.is_coordinate(t));
        }
        for s in score_a {
            assert!(s > 0.0 && s <= 1.0);
        }
    }

    #[test]
    fn decoder_paths_pass_grad_check() {
        use crate::tensor::{grad_check, GradCheckConfig, ParamStore};
        let cfg = ModelConfig::toy();
        let model = toy_model(15);
        let vocab = model.vocab();
        // Decoder parameters plus the features act as probe targets, so
        // self-attention, cross-attention, FFN, and head all carry
        // checked gradients.
        let mut store = ParamStore::new();
        for (name, param) in model.store.iter() {
            if name.starts_with("dec.") {
                store.insert(name, param.value.clone());
            }
        }
        let mut rng = StdRng::seed_from_u64(16);
        store.insert("feats", rand_feats(&cfg, &mut rng));
        let input: [Token; 5] = [vocab.cmd_token(), 9, 42, 77, 100];
        let report = grad_check(
            &store,
            move |t, p| {
                let feats = p.var("feats")?;
                let logits = teacher_forcing_logits(t, p, &cfg, &vocab, feats, &input)?;
                let sq = t.mul(logits, logits)?;
                Ok(t.mean_all(sq))
            },
            &GradCheckConfig { probes: 80, ..Default::default() },
        )
        .unwrap();
        assert!(report.passed(), "max rel err {:.3e}", report.max_rel_err);
    }

    #[test]
    fn greedy_matches_teacher_forced_argmax_chain() {
        let cfg = ModelConfig::toy();
        let model = toy_model(11);
        let vocab = model.vocab();
        let mut rng = StdRng::seed_from_u64(12);
        let feats = rand_feats(&cfg, &mut rng);

        let mut tape = Tape::new();
        let p = tape.register(&model.store);
        let fv = tape.leaf(&feats);
        let (tokens, _) = greedy_decode(&mut tape, &p, &cfg, &vocab, fv).unwrap();

        // Feeding greedy's own output as teacher input reproduces it.
        let input = [vocab.cmd_token(), tokens[0], tokens[1], tokens[2], tokens[3]];
        let logits = teacher_forcing_logits(&mut tape, &p, &cfg, &vocab, fv, &input).unwrap();
        let cols = vocab.head_dim();
        for (pos, &want) in tokens.iter().enumerate() {
            let row = &tape.value(logits)[pos * cols..(pos + 1) * cols];
            let (got, _) = argmax_bins(row, &vocab);
            assert_eq!(got, want, "position {pos}");
        }
    }
}
