//! Multilevel progressive fusion over the encoder's search features:
//! a 3-level pyramid (transposed-conv up, identity, max-pool down) fused
//! top-down through UpFusion and bottom-up through DownFusion, output
//! sized exactly like the input. The concat and elementwise-add ablation
//! variants share the same pyramid.

use crate::error::{CoreError, Result};
use crate::tensor::{Tape, TapeParams, Var};

/// Pyramid levels ordered fine to coarse: 2x, 1x, 0.5x of the input grid.
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

/// The 1x1 -> 3x3 -> 1x1 convolution stack shared by both fusion blocks.
pub struct FusionConvVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

impl FusionConvVars {
    pub fn resolve(p: &TapeParams, prefix: &str) -> Result<Self> {
        Ok(Self {
            w1: p.var(&format!("{prefix}.w1"))?,
            b1: p.var(&format!("{prefix}.b1"))?,
            w2: p.var(&format!("{prefix}.w2"))?,
            b2: p.var(&format!("{prefix}.b2"))?,
            w3: p.var(&format!("{prefix}.w3"))?,
            b3: p.var(&format!("{prefix}.b3"))?,
        })
    }
}

fn conv_bias(t: &mut Tape, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
    let y = t.conv2d(x, w, stride, pad)?;
    t.bias_channels(y, b)
}

/// Expand the flat `[C, g, g]` feature map into three scales.
pub fn build_pyramid(t: &mut Tape, fx: Var, expand_w: Var, expand_b: Var) -> Result<FeaturePyramid> {
    let s = t.shape(fx).to_vec();
    if s.len() != 3 || s[1] != s[2] {
        return Err(CoreError::contract("build_pyramid", format!("wants [C,g,g], got {s:?}")));
    }
    if s[1] % 2 != 0 {
        return Err(CoreError::contract(
            "build_pyramid",
            format!("grid {} is odd; the pooled level needs even extents", s[1]),
        ));
    }
    let up = t.conv_transpose2d(fx, expand_w, 2)?;
    let fine = t.bias_channels(up, expand_b)?;
    let coarse = t.max_pool2(fx)?;
    Ok(FeaturePyramid { levels: vec![fine, fx, coarse] })
}

impl FeaturePyramid {
    /// Check the factor-of-2 ladder and the shared channel count.
    pub fn validate(&self, t: &Tape) -> Result<()> {
        for pair in self.levels.windows(2) {
            let a = t.shape(pair[0]);
            let b = t.shape(pair[1]);
            if a[0] != b[0] || a[1] != b[1] * 2 || a[2] != b[2] * 2 {
                return Err(CoreError::contract(
                    "FeaturePyramid",
                    format!("adjacent levels {a:?} / {b:?} must differ by exactly 2x"),
                ));
            }
        }
        Ok(())
    }
}

/// Top-down fusion: upsample the coarse map onto the fine one, concat,
/// squeeze back to C channels through the conv stack.
pub fn up_fusion(t: &mut Tape, f_h: Var, f_l: Var, vars: &FusionConvVars) -> Result<Var> {
    let sh = t.shape(f_h).to_vec();
    let sl = t.shape(f_l).to_vec();
    if sh[0] != sl[0] || sh[1] != 2 * sl[1] || sh[2] != 2 * sl[2] {
        return Err(CoreError::ShapeMismatch { op: "up_fusion", lhs: sh, rhs: sl });
    }
    let up = t.upsample_bilinear2(f_l)?;
    let cat = t.concat(&[f_h, up], 0)?;
    let y = conv_bias(t, cat, vars.w1, vars.b1, 1, 0)?;
    let y = conv_bias(t, y, vars.w2, vars.b2, 1, 1)?;
    conv_bias(t, y, vars.w3, vars.b3, 1, 0)
}

/// Bottom-up fusion: pool the fine map onto the coarse one, concat,
/// same conv stack. Output lives at the coarse resolution.
pub fn down_fusion(t: &mut Tape, f_l: Var, f_h: Var, vars: &FusionConvVars) -> Result<Var> {
    let sl = t.shape(f_l).to_vec();
    let sh = t.shape(f_h).to_vec();
    if sl[0] != sh[0] || sl[1] != 2 * sh[1] || sl[2] != 2 * sh[2] {
        return Err(CoreError::ShapeMismatch { op: "down_fusion", lhs: sl, rhs: sh });
    }
    let pooled = t.max_pool2(f_l)?;
    let cat = t.concat(&[pooled, f_h], 0)?;
    let y = conv_bias(t, cat, vars.w1, vars.b1, 1, 0)?;
    let y = conv_bias(t, y, vars.w2, vars.b2, 1, 1)?;
    conv_bias(t, y, vars.w3, vars.b3, 1, 0)
}

/// The full progressive pass: coarse -> mid -> fine top-down, then one
/// bottom-up step back to the input grid.
pub fn mpfm(t: &mut Tape, fx: Var, p: &TapeParams) -> Result<Var> {
    let expand_w = p.var("fus.expand.w")?;
    let expand_b = p.var("fus.expand.b")?;
    let pyr = build_pyramid(t, fx, expand_w, expand_b)?;
    pyr.validate(t)?;
    let up1 = FusionConvVars::resolve(p, "fus.up1")?;
    let up2 = FusionConvVars::resolve(p, "fus.up2")?;
    let down1 = FusionConvVars::resolve(p, "fus.down1")?;
    let mid = up_fusion(t, pyr.levels[1], pyr.levels[2], &up1)?;
    let fine = up_fusion(t, pyr.levels[0], mid, &up2)?;
    down_fusion(t, fine, mid, &down1)
}

/// Resize every pyramid level onto the 1x grid (pool finer, upsample
/// coarser). Levels must sit within one factor-2 step of the target.
fn align_levels(t: &mut Tape, levels: &[Var]) -> Result<Vec<Var>> {
    if levels.is_empty() {
        return Err(CoreError::contract("align_levels", "empty pyramid"));
    }
    let target = t.shape(levels[levels.len() / 2]).to_vec();
    levels
        .iter()
        .map(|&v| {
            let s = t.shape(v).to_vec();
            if s == target {
                Ok(v)
            } else if s[1] == target[1] * 2 && s[2] == target[2] * 2 {
                t.max_pool2(v)
            } else if target[1] == s[1] * 2 && target[2] == s[2] * 2 {
                t.upsample_bilinear2(v)
            } else {
                Err(CoreError::ShapeMismatch { op: "align_levels", lhs: s, rhs: target.clone() })
            }
        })
        .collect()
}

/// Ablation variant: concatenate aligned levels and squeeze with a 1x1 conv.
pub fn conf_fusion(t: &mut Tape, levels: &[Var], p: &TapeParams) -> Result<Var> {
    let aligned = align_levels(t, levels)?;
    let cat = t.concat(&aligned, 0)?;
    let w = p.var("fus.conf.w")?;
    let b = p.var("fus.conf.b")?;
    conv_bias(t, cat, w, b, 1, 0)
}

/// Ablation variant: 1x1-project each aligned level and sum elementwise.
pub fn addf_fusion(t: &mut Tape, levels: &[Var], p: &TapeParams) -> Result<Var> {
    let aligned = align_levels(t, levels)?;
    let mut acc: Option<Var> = None;
    for (i, &v) in aligned.iter().enumerate() {
        let w = p.var(&format!("fus.addf{i}.w"))?;
        let b = p.var(&format!("fus.addf{i}.b"))?;
        let proj = conv_bias(t, v, w, b, 1, 0)?;
        acc = Some(match acc {
            None => proj,
            Some(a) => t.add(a, proj)?,
        });
    }
    Ok(acc.expect("checked non-empty"))
}
