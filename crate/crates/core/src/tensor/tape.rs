//! Wengert tape: eager forward evaluation with operation recording, replayed
//! in reverse for gradients.
//!
//! Every op validates shapes up front and returns a contract-violation error
//! naming both shapes on mismatch. All loops run in a fixed order so that
//! identical inputs produce bit-identical outputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::tensor::{ParamStore, Tensor};

/// Finite stand-in for -inf in attention masks. Large enough that
/// `exp(x - max)` underflows to exactly 0.0 for any realistic score.
pub const ATTN_MASK_SENTINEL: f64 = -1.0e30;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Exp,
    Sqrt,
    Asin,
    Sin,
    Abs,
    Gelu,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Minimum { a: Var, b: Var },
    Maximum { a: Var, b: Var },
    BiasRows { x: Var, b: Var },
    BiasChannels { x: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    Unary { x: Var, kind: UnaryKind },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, stride: usize },
    MaxPool2 { x: Var },
    UpsampleBilinear2 { x: Var },
    Concat { xs: Vec<Var>, axis: usize },
    SliceAxis { x: Var, axis: usize, start: usize, len: usize },
    Reshape { x: Var },
    Transpose2 { x: Var },
    Embed { table: Var, ids: Vec<usize> },
    CrossEntropyRows { logits: Var, targets: Vec<usize> },
    SumAll { x: Var },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

/// Eagerly-evaluated computation tape.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Parameters registered on a tape, addressable by store name.
pub struct TapeParams {
    vars: BTreeMap<String, Var>,
}

impl TapeParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::MissingParam { name: name.to_string() })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.push_shared(op, shape, Arc::new(data))
    }

    fn push_shared(&mut self, op: Op, shape: Vec<usize>, data: Arc<Vec<f64>>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { op, shape, data });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ── Construction ────────────────────────────────────────────────

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_shared(Op::Leaf, t.shape().to_vec(), t.shared_data())
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.leaf(&t))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, vec![1], vec![v])
    }

    /// Register every parameter of the store as a leaf.
    pub fn register(&mut self, store: &ParamStore) -> TapeParams {
        let mut vars = BTreeMap::new();
        for (name, param) in store.iter() {
            vars.insert(name.to_string(), self.leaf(&param.value));
        }
        TapeParams { vars }
    }

    // ── Elementwise and scalar ops ──────────────────────────────────

    fn binary_same_shape(
        &mut self,
        opname: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(CoreError::ShapeMismatch {
                op: opname,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(op, shape, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div { a, b })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("minimum", a, b, |x, y| if x <= y { x } else { y }, Op::Minimum { a, b })
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("maximum", a, b, |x, y| if x >= y { x } else { y }, Op::Maximum { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale { x, c }, shape, data)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::AddConst { x }, shape, data)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let f = |v: f64| match kind {
            UnaryKind::Exp => v.exp(),
            UnaryKind::Sqrt => v.sqrt(),
            UnaryKind::Asin => v.asin(),
            UnaryKind::Sin => v.sin(),
            UnaryKind::Abs => v.abs(),
            UnaryKind::Gelu => gelu(v),
        };
        let data = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Unary { x, kind }, shape, data)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sqrt)
    }

    pub fn asin(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Asin)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sin)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Abs)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Gelu)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CoreError::ShapeMismatch { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(Op::Matmul { a, b }, vec![m, n], out))
    }

    pub fn transpose2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(CoreError::contract("transpose2", format!("wants a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose2 { x }, vec![c, r], out))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = Arc::clone(&self.nodes[x.0].data);
        Ok(self.push_shared(Op::Reshape { x }, shape.to_vec(), data))
    }

    pub fn bias_rows(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(CoreError::ShapeMismatch { op: "bias_rows", lhs: sx.to_vec(), rhs: sb.to_vec() });
        }
        let (m, n) = (sx[0], sx[1]);
        let xd = self.value(x);
        let bd = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = xd[i * n + j] + bd[j];
            }
        }
        Ok(self.push(Op::BiasRows { x, b }, vec![m, n], out))
    }

    pub fn bias_channels(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 3 || sb.len() != 1 || sx[0] != sb[0] {
            return Err(CoreError::ShapeMismatch {
                op: "bias_channels",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let xd = self.value(x);
        let bd = self.value(b);
        let mut out = vec![0.0; c * h * w];
        for ci in 0..c {
            let bias = bd[ci];
            for i in 0..h * w {
                out[ci * h * w + i] = xd[ci * h * w + i] + bias;
            }
        }
        Ok(self.push(Op::BiasChannels { x, b }, vec![c, h, w], out))
    }

    /// Fully-connected layer: `x @ w + b` over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.bias_rows(y, b)
    }

    // ── Normalization and attention pieces ──────────────────────────

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(CoreError::contract(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xd = self.value(x);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(xd[at(j)]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (xd[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(self.push(Op::Softmax { x, axis }, shape, out))
    }

    /// Layer normalization over the last axis with learnable gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| CoreError::contract("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(CoreError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape.clone(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = self.value(x).len() / c;
        let xd = self.value(x);
        let gd = self.value(gamma);
        let bd = self.value(beta);
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[r * c + j] = (row[j] - mean) * inv * gd[j] + bd[j];
            }
        }
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, shape, out))
    }

    // ── Spatial ops ─────────────────────────────────────────────────

    // Strided dual indexing; an iterator form would obscure the geometry.
    #[allow(clippy::needless_range_loop)]
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] {
            return Err(CoreError::ShapeMismatch { op: "conv2d", lhs: sx.to_vec(), rhs: sw.to_vec() });
        }
        if stride == 0 || sw[2] == 0 {
            return Err(CoreError::contract("conv2d", "stride and kernel must be >= 1"));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let ho = conv_out_extent("conv2d", h, k, stride, pad)?;
        let wo = conv_out_extent("conv2d", wd, k, stride, pad)?;
        let xd = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            for ci in 0..cin {
                for kh in 0..k {
                    for kw in 0..k {
                        let weight = wv[((co * cin + ci) * k + kh) * k + kw];
                        if weight == 0.0 {
                            continue;
                        }
                        for oh in 0..ho {
                            let ih = (oh * stride + kh) as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = &xd[(ci * h + ih as usize) * wd..(ci * h + ih as usize + 1) * wd];
                            let orow = &mut out[(co * ho + oh) * wo..(co * ho + oh + 1) * wo];
                            let (lo, hi) = valid_range(wo, wd, stride, kw, pad);
                            for ow in lo..hi {
                                let iw = ow * stride + kw - pad;
                                orow[ow] += weight * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(Op::Conv2d { x, w, stride, pad }, vec![cout, ho, wo], out))
    }

    /// Transposed convolution; output extent `(H-1)*stride + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[0] != sx[0] || sw[2] != sw[3] {
            return Err(CoreError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if stride == 0 {
            return Err(CoreError::contract("conv_transpose2d", "stride must be >= 1"));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[1], sw[2]);
        let ho = (h - 1) * stride + k;
        let wo = (wd - 1) * stride + k;
        let xd = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; cout * ho * wo];
        for ci in 0..cin {
            for co in 0..cout {
                for kh in 0..k {
                    for kw in 0..k {
                        let weight = wv[((ci * cout + co) * k + kh) * k + kw];
                        if weight == 0.0 {
                            continue;
                        }
                        for ih in 0..h {
                            let oh = ih * stride + kh;
                            let xrow = &xd[(ci * h + ih) * wd..(ci * h + ih + 1) * wd];
                            let orow = &mut out[(co * ho + oh) * wo..(co * ho + oh + 1) * wo];
                            for iw in 0..wd {
                                orow[iw * stride + kw] += weight * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(Op::ConvTranspose2d { x, w, stride }, vec![cout, ho, wo], out))
    }

    /// 2x2 max pooling with stride 2. Extents must be even.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(CoreError::contract(
                "max_pool2",
                format!("wants [C, even, even], got {s:?}"),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value(x);
        let mut out = vec![0.0; c * ho * wo];
        for ci in 0..c {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = xd[(ci * h + oh * 2 + dy) * w + ow * 2 + dx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[(ci * ho + oh) * wo + ow] = best;
                }
            }
        }
        Ok(self.push(Op::MaxPool2 { x }, vec![c, ho, wo], out))
    }

    /// x2 bilinear upsampling (half-pixel centers, edges clamped).
    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(CoreError::contract("upsample_bilinear2", format!("wants [C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h * 2, w * 2);
        let ytab = bilinear_taps(h);
        let xtab = bilinear_taps(w);
        let xd = self.value(x);
        let mut out = vec![0.0; c * ho * wo];
        for ci in 0..c {
            for oy in 0..ho {
                let (y0, y1, fy) = ytab[oy];
                for ox in 0..wo {
                    let (x0, x1, fx) = xtab[ox];
                    let v00 = xd[(ci * h + y0) * w + x0];
                    let v01 = xd[(ci * h + y0) * w + x1];
                    let v10 = xd[(ci * h + y1) * w + x0];
                    let v11 = xd[(ci * h + y1) * w + x1];
                    let top = (1.0 - fx) * v00 + fx * v01;
                    let bot = (1.0 - fx) * v10 + fx * v11;
                    out[(ci * ho + oy) * wo + ox] = (1.0 - fy) * top + fy * bot;
                }
            }
        }
        Ok(self.push(Op::UpsampleBilinear2 { x }, vec![c, ho, wo], out))
    }

    // ── Structure ops ───────────────────────────────────────────────

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::contract("concat", "no inputs"));
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(CoreError::contract(
                "concat",
                format!("axis {axis} out of range for shape {first:?}"),
            ));
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(CoreError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; shape.iter().product()];
        for o in 0..outer {
            let mut offset = 0;
            for &v in xs {
                let len_v = self.shape(v)[axis];
                let chunk = len_v * inner;
                let src = &self.value(v)[o * chunk..(o + 1) * chunk];
                let dst_start = (o * axis_total + offset) * inner;
                out[dst_start..dst_start + chunk].copy_from_slice(src);
                offset += len_v;
            }
        }
        Ok(self.push(Op::Concat { xs: xs.to_vec(), axis }, shape, out))
    }

    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(CoreError::contract(
                "slice_axis",
                format!("slice [{start}, {start}+{len}) on axis {axis} of shape {shape:?}"),
            ));
        }
        let (outer, alen, inner) = axis_split(&shape, axis);
        let xd = self.value(x);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = (o * alen + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&xd[src..src + len * inner]);
        }
        Ok(self.push(Op::SliceAxis { x, axis, start, len }, out_shape, out))
    }

    /// Row lookup: `out[t] = table[ids[t]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(CoreError::contract("embed", format!("table must be [V,d], got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(CoreError::contract("embed", format!("id {bad} out of range for table [{v},{d}]")));
        }
        let td = self.value(table);
        let mut out = vec![0.0; ids.len() * d];
        for (t, &id) in ids.iter().enumerate() {
            out[t * d..(t + 1) * d].copy_from_slice(&td[id * d..(id + 1) * d]);
        }
        Ok(self.push(Op::Embed { table, ids: ids.to_vec() }, vec![ids.len(), d], out))
    }

    /// Per-row cross-entropy against target column indices, via log-sum-exp.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(CoreError::contract(
                "cross_entropy_rows",
                format!("logits {s:?} vs {} targets", targets.len()),
            ));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(CoreError::contract("cross_entropy_rows", format!("target {bad} >= {cols}")));
        }
        let xd = self.value(logits);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            out[r] = lse - row[targets[r]];
        }
        Ok(self.push(Op::CrossEntropyRows { logits, targets: targets.to_vec() }, vec![rows], out))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        self.push(Op::SumAll { x }, vec![1], vec![s])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients are then readable
    /// through [`Tape::grad`] until the next backward call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(CoreError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_op(&self.nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

// ── Shared kernels ──────────────────────────────────────────────────

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn conv_out_extent(op: &'static str, h: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = h + 2 * pad;
    if span < k || (span - k) % stride != 0 {
        return Err(CoreError::contract(
            op,
            format!("output extent ({h} + 2*{pad} - {k}) / {stride} + 1 is not integral"),
        ));
    }
    Ok((span - k) / stride + 1)
}

/// Valid output range so that `ow*stride + kw - pad` lands inside `[0, w)`.
fn valid_range(wo: usize, w: usize, stride: usize, kw: usize, pad: usize) -> (usize, usize) {
    let lo = if kw >= pad { 0 } else { (pad - kw).div_ceil(stride) };
    let max_iw = w as isize - 1 - kw as isize + pad as isize;
    if max_iw < 0 {
        return (0, 0);
    }
    let hi = (max_iw as usize / stride + 1).min(wo);
    (lo.min(hi), hi)
}

/// Source taps for one x2 upsampled axis: (low index, high index, weight).
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            if src <= 0.0 {
                (0, 0, 0.0)
            } else {
                let i0 = src.floor() as usize;
                let f = src - i0 as f64;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, f)
            }
        })
        .collect()
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

// ── Backward dispatch ───────────────────────────────────────────────

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, add: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
    add(slot);
}

fn backprop_op(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let sa = &nodes[a.0].shape;
            let (m, k) = (sa[0], sa[1]);
            let n = nodes[b.0].shape[1];
            let ad = &nodes[a.0].data;
            let bd = &nodes[b.0].data;
            accumulate(grads, nodes, a.0, |da| {
                // dA = dC @ B^T
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let darow = &mut da[i * k..(i + 1) * k];
                    for kk in 0..k {
                        let brow = &bd[kk * n..(kk + 1) * n];
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += grow[j] * brow[j];
                        }
                        darow[kk] += acc;
                    }
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                // dB = A^T @ dC
                for i in 0..m {
                    let arow = &ad[i * k..(i + 1) * k];
                    let grow = &g[i * n..(i + 1) * n];
                    for (kk, &aik) in arow.iter().enumerate() {
                        if aik == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            dbrow[j] += aik * grow[j];
                        }
                    }
                }
            });
        }
        Op::Add { a, b } => {
            accumulate(grads, nodes, a.0, |da| {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for (d, &gv) in db.iter_mut().zip(g) {
                    *d += gv;
                }
            });
        }
        Op::Sub { a, b } => {
            accumulate(grads, nodes, a.0, |da| {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for (d, &gv) in db.iter_mut().zip(g) {
                    *d -= gv;
                }
            });
        }
        Op::Mul { a, b } => {
            let ad = Arc::clone(&nodes[a.0].data);
            let bd = Arc::clone(&nodes[b.0].data);
            accumulate(grads, nodes, a.0, |da| {
                for i in 0..g.len() {
                    da[i] += g[i] * bd[i];
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for i in 0..g.len() {
                    db[i] += g[i] * ad[i];
                }
            });
        }
        Op::Div { a, b } => {
            let ad = Arc::clone(&nodes[a.0].data);
            let bd = Arc::clone(&nodes[b.0].data);
            accumulate(grads, nodes, a.0, |da| {
                for i in 0..g.len() {
                    da[i] += g[i] / bd[i];
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for i in 0..g.len() {
                    db[i] -= g[i] * ad[i] / (bd[i] * bd[i]);
                }
            });
        }
        Op::Minimum { a, b } => {
            let ad = Arc::clone(&nodes[a.0].data);
            let bd = Arc::clone(&nodes[b.0].data);
            accumulate(grads, nodes, a.0, |da| {
                for i in 0..g.len() {
                    if ad[i] <= bd[i] {
                        da[i] += g[i];
                    }
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for i in 0..g.len() {
                    if ad[i] > bd[i] {
                        db[i] += g[i];
                    }
                }
            });
        }
        Op::Maximum { a, b } => {
            let ad = Arc::clone(&nodes[a.0].data);
            let bd = Arc::clone(&nodes[b.0].data);
            accumulate(grads, nodes, a.0, |da| {
                for i in 0..g.len() {
                    if ad[i] >= bd[i] {
                        da[i] += g[i];
                    }
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for i in 0..g.len() {
                    if ad[i] < bd[i] {
                        db[i] += g[i];
                    }
                }
            });
        }
        Op::BiasRows { x, b } => {
            let n = nodes[b.0].shape[0];
            accumulate(grads, nodes, x.0, |dx| {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for (i, &gv) in g.iter().enumerate() {
                    db[i % n] += gv;
                }
            });
        }
        Op::BiasChannels { x, b } => {
            let plane = nodes[id].shape[1] * nodes[id].shape[2];
            accumulate(grads, nodes, x.0, |dx| {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
            });
            accumulate(grads, nodes, b.0, |db| {
                for (i, &gv) in g.iter().enumerate() {
                    db[i / plane] += gv;
                }
            });
        }
        Op::Scale { x, c } => {
            let c = *c;
            accumulate(grads, nodes, x.0, |dx| {
                for i in 0..g.len() {
                    dx[i] += g[i] * c;
                }
            });
        }
        Op::AddConst { x } => {
            accumulate(grads, nodes, x.0, |dx| {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
            });
        }
        Op::Unary { x, kind } => {
            let xd = Arc::clone(&nodes[x.0].data);
            let yd = Arc::clone(&nodes[id].data);
            let kind = *kind;
            accumulate(grads, nodes, x.0, |dx| {
                for i in 0..g.len() {
                    let d = match kind {
                        UnaryKind::Exp => yd[i],
                        UnaryKind::Sqrt => 0.5 / yd[i],
                        UnaryKind::Asin => 1.0 / (1.0 - xd[i] * xd[i]).sqrt(),
                        UnaryKind::Sin => xd[i].cos(),
                        UnaryKind::Abs => {
                            if xd[i] >= 0.0 {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        UnaryKind::Gelu => gelu_grad(xd[i]),
                    };
                    dx[i] += g[i] * d;
                }
            });
        }
        Op::Softmax { x, axis } => {
            let shape = &nodes[id].shape;
            let (outer, len, inner) = axis_split(shape, *axis);
            let sd = Arc::clone(&nodes[id].data);
            accumulate(grads, nodes, x.0, |dx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            dot += g[at(j)] * sd[at(j)];
                        }
                        for j in 0..len {
                            dx[at(j)] += sd[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            });
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let c = *nodes[id].shape.last().unwrap();
            let rows = nodes[id].data.len() / c;
            let xd = Arc::clone(&nodes[x.0].data);
            let gd = Arc::clone(&nodes[gamma.0].data);
            let eps = *eps;
            // Recompute per-row stats; cheaper than caching at our scales.
            let mut xhat = vec![0.0; xd.len()];
            let mut invs = vec![0.0; rows];
            for r in 0..rows {
                let row = &xd[r * c..(r + 1) * c];
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + eps).sqrt();
                invs[r] = inv;
                for j in 0..c {
                    xhat[r * c + j] = (row[j] - mean) * inv;
                }
            }
            accumulate(grads, nodes, x.0, |dx| {
                for r in 0..rows {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let dxh = g[r * c + j] * gd[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[r * c + j];
                    }
                    mean_dxhat /= c as f64;
                    mean_dxhat_xhat /= c as f64;
                    for j in 0..c {
                        let dxh = g[r * c + j] * gd[j];
                        dx[r * c + j] +=
                            invs[r] * (dxh - mean_dxhat - xhat[r * c + j] * mean_dxhat_xhat);
                    }
                }
            });
            accumulate(grads, nodes, gamma.0, |dgamma| {
                for r in 0..rows {
                    for j in 0..c {
                        dgamma[j] += g[r * c + j] * xhat[r * c + j];
                    }
                }
            });
            accumulate(grads, nodes, beta.0, |dbeta| {
                for r in 0..rows {
                    for j in 0..c {
                        dbeta[j] += g[r * c + j];
                    }
                }
            });
        }
        Op::Conv2d { x, w, stride, pad } => {
            let (stride, pad) = (*stride, *pad);
            let sx = &nodes[x.0].shape;
            let sw = &nodes[w.0].shape;
            let so = &nodes[id].shape;
            let (cin, h, wd) = (sx[0], sx[1], sx[2]);
            let (cout, k) = (sw[0], sw[2]);
            let (ho, wo) = (so[1], so[2]);
            let xd = Arc::clone(&nodes[x.0].data);
            let wv = Arc::clone(&nodes[w.0].data);
            accumulate(grads, nodes, x.0, |dx| {
                for co in 0..cout {
                    for ci in 0..cin {
                        for kh in 0..k {
                            for kw in 0..k {
                                let weight = wv[((co * cin + ci) * k + kh) * k + kw];
                                if weight == 0.0 {
                                    continue;
                                }
                                for oh in 0..ho {
                                    let ih = (oh * stride + kh) as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let grow = &g[(co * ho + oh) * wo..(co * ho + oh + 1) * wo];
                                    let dxrow = &mut dx
                                        [(ci * h + ih as usize) * wd..(ci * h + ih as usize + 1) * wd];
                                    let (lo, hi) = valid_range(wo, wd, stride, kw, pad);
                                    for ow in lo..hi {
                                        dxrow[ow * stride + kw - pad] += weight * grow[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            accumulate(grads, nodes, w.0, |dw| {
                for co in 0..cout {
                    for ci in 0..cin {
                        for kh in 0..k {
                            for kw in 0..k {
                                let mut acc = 0.0;
                                for oh in 0..ho {
                                    let ih = (oh * stride + kh) as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let grow = &g[(co * ho + oh) * wo..(co * ho + oh + 1) * wo];
                                    let xrow = &xd
                                        [(ci * h + ih as usize) * wd..(ci * h + ih as usize + 1) * wd];
                                    let (lo, hi) = valid_range(wo, wd, stride, kw, pad);
                                    for ow in lo..hi {
                                        acc += grow[ow] * xrow[ow * stride + kw - pad];
                                    }
                                }
                                dw[((co * cin + ci) * k + kh) * k + kw] += acc;
                            }
                        }
                    }
                }
            });
        }
        Op::ConvTranspose2d { x, w, stride } => {
            let stride = *stride;
            let sx = &nodes[x.0].shape;
            let sw = &nodes[w.0].shape;
            let so = &nodes[id].shape;
            let (cin, h, wd) = (sx[0], sx[1], sx[2]);
            let (cout, k) = (sw[1], sw[2]);
            let (ho, wo) = (so[1], so[2]);
            let xd = Arc::clone(&nodes[x.0].data);
            let wv = Arc::clone(&nodes[w.0].data);
            accumulate(grads, nodes, x.0, |dx| {
                for ci in 0..cin {
                    for co in 0..cout {
                        for kh in 0..k {
                            for kw in 0..k {
                                let weight = wv[((ci * cout + co) * k + kh) * k + kw];
                                if weight == 0.0 {
                                    continue;
                                }
                                for ih in 0..h {
                                    let oh = ih * stride + kh;
                                    let grow = &g[(co * ho + oh) * wo..(co * ho + oh + 1) * wo];
                                    let dxrow = &mut dx[(ci * h + ih) * wd..(ci * h + ih + 1) * wd];
                                    for iw in 0..wd {
                                        dxrow[iw] += weight * grow[iw * stride + kw];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            accumulate(grads, nodes, w.0, |dw| {
                for ci in 0..cin {
                    for co in 0..cout {
                        for kh in 0..k {
                            for kw in 0..k {
                                let mut acc = 0.0;
                                for ih in 0..h {
                                    let oh = ih * stride + kh;
                                    let grow = &g[(co * ho + oh) * wo..(co * ho + oh + 1) * wo];
                                    let xrow = &xd[(ci * h + ih) * wd..(ci * h + ih + 1) * wd];
                                    for iw in 0..wd {
                                        acc += xrow[iw] * grow[iw * stride + kw];
                                    }
                                }
                                dw[((ci * cout + co) * k + kh) * k + kw] += acc;
                            }
                        }
                    }
                }
            });
        }
        Op::MaxPool2 { x } => {
            let sx = &nodes[x.0].shape;
            let (c, h, w) = (sx[0], sx[1], sx[2]);
            let (ho, wo) = (h / 2, w / 2);
            let xd = Arc::clone(&nodes[x.0].data);
            accumulate(grads, nodes, x.0, |dx| {
                for ci in 0..c {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            // First max in window row-major order gets the gradient.
                            let mut best = f64::NEG_INFINITY;
                            let mut arg = 0;
                            for dy in 0..2 {
                                for dxo in 0..2 {
                                    let idx = (ci * h + oh * 2 + dy) * w + ow * 2 + dxo;
                                    if xd[idx] > best {
                                        best = xd[idx];
                                        arg = idx;
                                    }
                                }
                            }
                            dx[arg] += g[(ci * ho + oh) * wo + ow];
                        }
                    }
                }
            });
        }
        Op::UpsampleBilinear2 { x } => {
            let sx = &nodes[x.0].shape;
            let (c, h, w) = (sx[0], sx[1], sx[2]);
            let (ho, wo) = (h * 2, w * 2);
            let ytab = bilinear_taps(h);
            let xtab = bilinear_taps(w);
            accumulate(grads, nodes, x.0, |dx| {
                for ci in 0..c {
                    for oy in 0..ho {
                        let (y0, y1, fy) = ytab[oy];
                        for ox in 0..wo {
                            let (x0, x1, fx) = xtab[ox];
                            let gv = g[(ci * ho + oy) * wo + ox];
                            dx[(ci * h + y0) * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            dx[(ci * h + y0) * w + x1] += gv * (1.0 - fy) * fx;
                            dx[(ci * h + y1) * w + x0] += gv * fy * (1.0 - fx);
                            dx[(ci * h + y1) * w + x1] += gv * fy * fx;
                        }
                    }
                }
            });
        }
        Op::Concat { xs, axis } => {
            let shape = &nodes[id].shape;
            let (outer, total, inner) = axis_split(shape, *axis);
            let mut offset = 0;
            for &v in xs {
                let len_v = nodes[v.0].shape[*axis];
                let chunk = len_v * inner;
                let off = offset;
                accumulate(grads, nodes, v.0, |dv| {
                    for o in 0..outer {
                        let src = (o * total + off) * inner;
                        let dst = o * chunk;
                        for i in 0..chunk {
                            dv[dst + i] += g[src + i];
                        }
                    }
                });
                offset += len_v;
            }
        }
        Op::SliceAxis { x, axis, start, len } => {
            let shape = &nodes[x.0].shape;
            let (outer, alen, inner) = axis_split(shape, *axis);
            let (start, len) = (*start, *len);
            accumulate(grads, nodes, x.0, |dx| {
                for o in 0..outer {
                    let dst = (o * alen + start) * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        dx[dst + i] += g[src + i];
                    }
                }
            });
        }
        Op::Reshape { x } => {
            accumulate(grads, nodes, x.0, |dx| {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
            });
        }
        Op::Transpose2 { x } => {
            let sx = &nodes[x.0].shape;
            let (r, c) = (sx[0], sx[1]);
            accumulate(grads, nodes, x.0, |dx| {
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::Embed { table, ids } => {
            let d = nodes[table.0].shape[1];
            accumulate(grads, nodes, table.0, |dt| {
                for (t, &idx) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[idx * d + j] += g[t * d + j];
                    }
                }
            });
        }
        Op::CrossEntropyRows { logits, targets } => {
            let s = &nodes[logits.0].shape;
            let (rows, cols) = (s[0], s[1]);
            let xd = Arc::clone(&nodes[logits.0].data);
            accumulate(grads, nodes, logits.0, |dl| {
                for r in 0..rows {
                    let row = &xd[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                    for j in 0..cols {
                        let p = (row[j] - max).exp() / sum;
                        let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                        dl[r * cols + j] += g[r] * (p - onehot);
                    }
                }
            });
        }
        Op::SumAll { x } => {
            let gv = g[0];
            accumulate(grads, nodes, x.0, |dx| {
                for d in dx.iter_mut() {
                    *d += gv;
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_select() {
        let mut tape = Tape::new();
        let p = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let b = tape.leaf(&t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(p, b).unwrap();
        assert_eq!(tape.value(c), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(&[2, 3]));
        let b = tape.leaf(&Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_shift() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[0.0, 0.0]));
        let s = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(s), &[0.5, 0.5]);

        let a = tape.leaf(&t(&[3], &[0.3, -1.2, 2.0]));
        let b = tape.add_const(a, 17.5);
        let sa = tape.softmax(a, 0).unwrap();
        let sb = tape.softmax(b, 0).unwrap();
        for (x, y) in tape.value(sa).iter().zip(tape.value(sb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_direct_oracle() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.softmax(x, 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, &v) in tape.value(s).iter().enumerate() {
            let expect = ((i + 1) as f64).exp() / z;
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_one_by_one_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.leaf(&t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv2d_box_kernel_interior() {
        let mut tape = Tape::new();
        let c = 0.7;
        let x = tape.leaf(&Tensor::filled(&[1, 5, 5], c));
        let w = tape.leaf(&Tensor::filled(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, 1, 1).unwrap();
        let yd = tape.value(y);
        // Interior pixels see all 9 taps.
        for i in 1..4 {
            for j in 1..4 {
                assert!((yd[i * 5 + j] - 9.0 * c).abs() < 1e-12);
            }
        }
        // Corner sees 4 taps.
        assert!((yd[0] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv2d_non_integral_extent_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[1, 5, 5]));
        let w = tape.leaf(&Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tape.conv2d(x, w, 2, 0).is_err());
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(&t(&[2, 1], &[9.0, 8.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3]);
        assert_eq!(tape.value(c), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let back = tape.slice_axis(c, 1, 0, 2).unwrap();
        assert_eq!(tape.value(back), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn max_pool_constant_passthrough() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::filled(&[1, 4, 4], 0.37));
        let y = tape.max_pool2(x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.37));
    }

    #[test]
    fn upsample_constant_passthrough() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::filled(&[2, 3, 3], 1.25));
        let y = tape.upsample_bilinear2(x).unwrap();
        assert_eq!(tape.shape(y), &[2, 6, 6]);
        for &v in tape.value(y) {
            assert!((v - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_of_square_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g, &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn embed_lookup_and_scatter() {
        let mut tape = Tape::new();
        let table = tape.leaf(&t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let e = tape.embed(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(e), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = tape.sum_all(e);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_matches_log() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&Tensor::zeros(&[2, 5]));
        let ce = tape.cross_entropy_rows(logits, &[1, 4]).unwrap();
        for &v in tape.value(ce) {
            assert!((v - (5.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_sentinel_zeroes_softmax_weight() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, ATTN_MASK_SENTINEL, 2.0]));
        let s = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(s)[1], 0.0);
        assert!(tape.value(s).iter().sum::<f64>() > 0.999999);
    }
}
