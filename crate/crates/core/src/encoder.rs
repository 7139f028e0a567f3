//! Joint feature extraction and fusion: patch embeddings for templates and
//! search region run through a stack of pre-norm attention layers in one
//! pass. Template tokens self-attend only among themselves; search tokens
//! attend over the concatenation of template and search keys, so target
//! appearance flows into the search stream but never the other way.

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::tensor::{Tape, TapeParams, Tensor, Var};

/// Fixed 1-D sinusoidal position table over flattened patch index.
pub fn sinusoid_table(positions: usize, dim: usize) -> Tensor {
    debug_assert!(dim % 2 == 0);
    Tensor::from_fn(&[positions, dim], |i| {
        let pos = (i / dim) as f64;
        let ch = i % dim;
        let pair = (ch / 2) as f64;
        let freq = 10_000f64.powf(-2.0 * pair / dim as f64);
        if ch % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

/// Projection weights of one attention block.
pub struct AttnWeights {
    pub qkv_w: Var,
    pub qkv_b: Var,
    pub proj_w: Var,
    pub proj_b: Var,
}

/// All parameters of one encoder layer, resolved by name.
pub struct EncLayerVars {
    pub norm1_g: Var,
    pub norm1_b: Var,
    pub attn: AttnWeights,
    pub norm2_g: Var,
    pub norm2_b: Var,
    pub mlp1_w: Var,
    pub mlp1_b: Var,
    pub mlp2_w: Var,
    pub mlp2_b: Var,
}

impl EncLayerVars {
    pub fn resolve(p: &TapeParams, layer: usize) -> Result<Self> {
        let n = |suffix: &str| format!("enc.layer{layer}.{suffix}");
        Ok(Self {
            norm1_g: p.var(&n("norm1.g"))?,
            norm1_b: p.var(&n("norm1.b"))?,
            attn: AttnWeights {
                qkv_w: p.var(&n("qkv.w"))?,
                qkv_b: p.var(&n("qkv.b"))?,
                proj_w: p.var(&n("proj.w"))?,
                proj_b: p.var(&n("proj.b"))?,
            },
            norm2_g: p.var(&n("norm2.g"))?,
            norm2_b: p.var(&n("norm2.b"))?,
            mlp1_w: p.var(&n("mlp1.w"))?,
            mlp1_b: p.var(&n("mlp1.b"))?,
            mlp2_w: p.var(&n("mlp2.w"))?,
            mlp2_b: p.var(&n("mlp2.b"))?,
        })
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Scaled dot-product attention over pre-projected q/k/v, split into heads.
/// `mask`, when given, is added to every head's score matrix.
pub fn multi_head_attention(
    t: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let width = t.shape(q)[1];
    if width % heads != 0 {
        return Err(CoreError::contract(
            "multi_head_attention",
            format!("width {width} not divisible by {heads} heads"),
        ));
    }
    let head_dim = width / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_axis(q, 1, h * head_dim, head_dim)?;
        let kh = t.slice_axis(k, 1, h * head_dim, head_dim)?;
        let vh = t.slice_axis(v, 1, h * head_dim, head_dim)?;
        let kht = t.transpose2(kh)?;
        let raw = t.matmul(qh, kht)?;
        let mut scores = t.scale(raw, scale);
        if let Some(m) = mask {
            scores = t.add(scores, m)?;
        }
        let probs = t.softmax(scores, 1)?;
        outputs.push(t.matmul(probs, vh)?);
    }
    t.concat(&outputs, 1)
}

fn split_qkv(t: &mut Tape, x: Var, w: &AttnWeights) -> Result<(Var, Var, Var)> {
    let width = t.shape(x)[1];
    let qkv = t.linear(x, w.qkv_w, w.qkv_b)?;
    let q = t.slice_axis(qkv, 1, 0, width)?;
    let k = t.slice_axis(qkv, 1, width, width)?;
    let v = t.slice_axis(qkv, 1, 2 * width, width)?;
    Ok((q, k, v))
}

/// Asymmetric joint attention: templates self-attend, the search stream
/// attends over concatenated template+search keys/values. Returns the
/// projected outputs split back into the two streams.
pub fn joint_attention(
    t: &mut Tape,
    zp: Var,
    xp: Var,
    w: &AttnWeights,
    heads: usize,
) -> Result<(Var, Var)> {
    let wz = t.shape(zp)[1];
    let wx = t.shape(xp)[1];
    if wz != wx {
        return Err(CoreError::ShapeMismatch {
            op: "joint_attention",
            lhs: t.shape(zp).to_vec(),
            rhs: t.shape(xp).to_vec(),
        });
    }
    let tz = t.shape(zp)[0];
    let (qz, kz, vz) = split_qkv(t, zp, w)?;
    let (qx, kx, vx) = split_qkv(t, xp, w)?;
    let km = t.concat(&[kz, kx], 0)?;
    let vm = t.concat(&[vz, vx], 0)?;
    let attn_z = multi_head_attention(t, qz, kz, vz, heads, None)?;
    let attn_x = multi_head_attention(t, qx, km, vm, heads, None)?;
    let cat = t.concat(&[attn_z, attn_x], 0)?;
    let projected = t.linear(cat, w.proj_w, w.proj_b)?;
    let z_out = t.slice_axis(projected, 0, 0, tz)?;
    let n = t.shape(projected)[0];
    let x_out = t.slice_axis(projected, 0, tz, n - tz)?;
    Ok((z_out, x_out))
}

/// One pre-norm encoder layer over the concatenated token sequence;
/// `tz` is the template-token count at the front of the sequence.
pub fn encoder_layer(t: &mut Tape, e: Var, vars: &EncLayerVars, heads: usize, tz: usize) -> Result<Var> {
    let total = t.shape(e)[0];
    let normed = t.layer_norm(e, vars.norm1_g, vars.norm1_b, LAYER_NORM_EPS)?;
    let zp = t.slice_axis(normed, 0, 0, tz)?;
    let xp = t.slice_axis(normed, 0, tz, total - tz)?;
    let (z_out, x_out) = joint_attention(t, zp, xp, &vars.attn, heads)?;
    let attn = t.concat(&[z_out, x_out], 0)?;
    let a = t.add(attn, e)?;
    let normed2 = t.layer_norm(a, vars.norm2_g, vars.norm2_b, LAYER_NORM_EPS)?;
    let hidden = t.linear(normed2, vars.mlp1_w, vars.mlp1_b)?;
    let act = t.gelu(hidden);
    let mlp = t.linear(act, vars.mlp2_w, vars.mlp2_b)?;
    t.add(mlp, a)
}

/// Patch-embed a `[1, H, W]` image into an `[N, C]` token sequence.
pub fn patch_embed(t: &mut Tape, p: &TapeParams, cfg: &ModelConfig, img: Var) -> Result<Var> {
    let shape = t.shape(img).to_vec();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(CoreError::contract("patch_embed", format!("wants [1,H,W], got {shape:?}")));
    }
    if shape[1] % cfg.patch != 0 || shape[2] % cfg.patch != 0 {
        return Err(CoreError::contract(
            "patch_embed",
            format!("extents {}x{} not divisible by patch {}", shape[1], shape[2], cfg.patch),
        ));
    }
    let w = p.var("enc.patch_embed.w")?;
    let b = p.var("enc.patch_embed.b")?;
    let conv = t.conv2d(img, w, cfg.patch, 0)?;
    let biased = t.bias_channels(conv, b)?;
    let c = t.shape(biased)[0];
    let n = t.shape(biased)[1] * t.shape(biased)[2];
    let flat = t.reshape(biased, &[c, n])?;
    t.transpose2(flat)
}

/// Full encoder: embed both templates and the search region, add position
/// tables, run the layer stack, return the search-token slice.
pub fn encode(
    t: &mut Tape,
    p: &TapeParams,
    cfg: &ModelConfig,
    fixed_template: Var,
    dynamic_template: Var,
    search: Var,
) -> Result<Var> {
    let zf = patch_embed(t, p, cfg, fixed_template)?;
    let zd = patch_embed(t, p, cfg, dynamic_template)?;
    let xs = patch_embed(t, p, cfg, search)?;

    let pos_z = p.var("enc.pos_z")?;
    let pos_x = p.var("enc.pos_x")?;
    let zf = t.add(zf, pos_z)?;
    let zd = t.add(zd, pos_z)?;
    let xs = t.add(xs, pos_x)?;

    let tz = 2 * t.shape(zf)[0];
    let nx = t.shape(xs)[0];
    let mut e = t.concat(&[zf, zd, xs], 0)?;
    for layer in 0..cfg.enc_layers {
        let vars = EncLayerVars::resolve(p, layer)?;
        e = encoder_layer(t, e, &vars, cfg.enc_heads, tz)?;
    }
    t.slice_axis(e, 0, tz, nx)
}
