//! Built-in gradient-check battery over every differentiable op, used by
//! the `gradcheck` CLI command and the acceptance suite. Each op runs on
//! three random small shapes; outputs are reduced through a fixed random
//! linear functional so every coordinate reaches the loss.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::tensor::{grad_check, GradCheckConfig, ParamStore, Tape, Tensor, Var};

pub struct OpCheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut StdRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

type ApplyFn = Box<dyn Fn(&mut Tape, Var, Var) -> Result<Var>>;
type ShapeFn = Box<dyn Fn(&[usize]) -> Vec<usize>>;

struct OpCase {
    name: &'static str,
    shapes_a: Vec<Vec<usize>>,
    shape_b: ShapeFn,
    range_a: (f64, f64),
    range_b: (f64, f64),
    apply: ApplyFn,
}

fn reduce_to_scalar(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let numel: usize = t.shape(y).iter().product();
    let mut rng = StdRng::seed_from_u64(seed);
    let flat = t.reshape(y, &[numel])?;
    let w = t.constant(&[numel], (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let prod = t.mul(flat, w)?;
    Ok(t.sum_all(prod))
}

fn cases() -> Vec<OpCase> {
    let same = || Box::new(|s: &[usize]| s.to_vec()) as ShapeFn;
    let shapes2 = || vec![vec![3usize], vec![2, 4], vec![2, 3, 2]];
    let mut out: Vec<OpCase> = Vec::new();
    let mut push = |name: &'static str,
                    shapes_a: Vec<Vec<usize>>,
                    shape_b: ShapeFn,
                    range_a: (f64, f64),
                    range_b: (f64, f64),
                    apply: ApplyFn| {
        out.push(OpCase { name, shapes_a, shape_b, range_a, range_b, apply });
    };

    push("add", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, b| t.add(a, b)));
    push("sub", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, b| t.sub(a, b)));
    push("mul", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, b| t.mul(a, b)));
    push("div", shapes2(), same(), (-1.0, 1.0), (0.5, 2.0), Box::new(|t, a, b| t.div(a, b)));
    push("minimum", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, b| t.minimum(a, b)));
    push("maximum", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, b| t.maximum(a, b)));
    push(
        "matmul",
        vec![vec![2, 3], vec![1, 4], vec![3, 2]],
        Box::new(|s: &[usize]| vec![s[1], 3]),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, b| t.matmul(a, b)),
    );
    push(
        "bias_rows",
        vec![vec![2, 3], vec![4, 2], vec![1, 5]],
        Box::new(|s: &[usize]| vec![s[1]]),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, b| t.bias_rows(a, b)),
    );
    push(
        "bias_channels",
        vec![vec![2, 2, 3], vec![3, 2, 2], vec![1, 4, 4]],
        Box::new(|s: &[usize]| vec![s[0]]),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, b| t.bias_channels(a, b)),
    );
    push("scale", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, _| Ok(t.scale(a, -1.7))));
    push("add_const", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, _| Ok(t.add_const(a, 0.4))));
    push("exp", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, _| Ok(t.exp(a))));
    push("sqrt", shapes2(), same(), (0.5, 2.0), (0.5, 2.0), Box::new(|t, a, _| Ok(t.sqrt(a))));
    push("asin", shapes2(), same(), (-0.9, 0.9), (-0.9, 0.9), Box::new(|t, a, _| Ok(t.asin(a))));
    push("sin", shapes2(), same(), (-2.0, 2.0), (-2.0, 2.0), Box::new(|t, a, _| Ok(t.sin(a))));
    push("abs", shapes2(), same(), (0.1, 2.0), (0.1, 2.0), Box::new(|t, a, _| Ok(t.abs(a))));
    push("gelu", shapes2(), same(), (-2.0, 2.0), (-2.0, 2.0), Box::new(|t, a, _| Ok(t.gelu(a))));
    push(
        "softmax_last",
        vec![vec![5], vec![3, 4], vec![2, 2, 3]],
        same(),
        (-2.0, 2.0),
        (-2.0, 2.0),
        Box::new(|t, a, _| {
            let axis = t.shape(a).len() - 1;
            t.softmax(a, axis)
        }),
    );
    push(
        "softmax_axis0",
        vec![vec![5], vec![3, 4], vec![2, 2, 3]],
        same(),
        (-2.0, 2.0),
        (-2.0, 2.0),
        Box::new(|t, a, _| t.softmax(a, 0)),
    );
    push(
        "layer_norm",
        vec![vec![2, 4], vec![3, 3], vec![1, 6]],
        Box::new(|s: &[usize]| vec![s[1]]),
        (-1.0, 1.0),
        (0.5, 1.5),
        Box::new(|t, a, b| {
            let c = t.shape(a)[1];
            let beta = t.constant(&[c], vec![0.1; c])?;
            t.layer_norm(a, b, beta, 1e-5)
        }),
    );
    push(
        "conv2d",
        vec![vec![1, 3, 3], vec![2, 4, 4], vec![2, 3, 5]],
        Box::new(|s: &[usize]| vec![2, s[0], 3, 3]),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, b| t.conv2d(a, b, 1, 1)),
    );
    push(
        "conv_transpose2d",
        vec![vec![1, 2, 2], vec![2, 3, 3], vec![3, 2, 3]],
        Box::new(|s: &[usize]| vec![s[0], 2, 2, 2]),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, b| t.conv_transpose2d(a, b, 2)),
    );
    push(
        "max_pool2",
        vec![vec![1, 4, 4], vec![2, 2, 6], vec![3, 4, 2]],
        same(),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, _| t.max_pool2(a)),
    );
    push(
        "upsample_bilinear2",
        vec![vec![1, 3, 3], vec![2, 2, 4], vec![3, 1, 5]],
        same(),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, _| t.upsample_bilinear2(a)),
    );
    push(
        "concat",
        vec![vec![2, 3], vec![1, 4], vec![3, 2]],
        Box::new(|s: &[usize]| vec![2, s[1]]),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, b| t.concat(&[a, b], 0)),
    );
    push(
        "slice_axis",
        vec![vec![4, 3], vec![3, 5], vec![5, 2]],
        same(),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, _| {
            let rows = t.shape(a)[0];
            t.slice_axis(a, 0, 1, rows - 1)
        }),
    );
    push(
        "transpose2",
        vec![vec![2, 3], vec![4, 1], vec![3, 3]],
        same(),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, _| t.transpose2(a)),
    );
    push(
        "reshape",
        vec![vec![2, 6], vec![4, 3], vec![1, 8]],
        same(),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, _| {
            let numel: usize = t.shape(a).iter().product();
            t.reshape(a, &[numel / 2, 2])
        }),
    );
    push(
        "embed",
        vec![vec![4, 3], vec![5, 2], vec![3, 4]],
        same(),
        (-1.0, 1.0),
        (-1.0, 1.0),
        Box::new(|t, a, _| t.embed(a, &[0, 2, 1, 2])),
    );
    push(
        "cross_entropy_rows",
        vec![vec![2, 5], vec![3, 4], vec![1, 6]],
        same(),
        (-2.0, 2.0),
        (-2.0, 2.0),
        Box::new(|t, a, _| {
            let rows = t.shape(a)[0];
            let targets: Vec<usize> = (0..rows).map(|r| r % t.shape(a)[1]).collect();
            t.cross_entropy_rows(a, &targets)
        }),
    );
    push("sum_all", shapes2(), same(), (-1.0, 1.0), (-1.0, 1.0), Box::new(|t, a, _| Ok(t.sum_all(a))));
    out
}

/// Run the whole battery. One outcome per (op, shape) pair.
pub fn run_op_gradchecks(eps: f64, tol: f64, seed: u64) -> Result<Vec<OpCheckOutcome>> {
    let mut outcomes = Vec::new();
    for case in cases() {
        for (i, shape) in case.shapes_a.iter().enumerate() {
            let mut rng = StdRng::seed_from_u64(seed ^ (i as u64 + 1));
            let mut store = ParamStore::new();
            store.insert("a", uniform(shape, case.range_a.0, case.range_a.1, &mut rng));
            store.insert("b", uniform(&(case.shape_b)(shape), case.range_b.0, case.range_b.1, &mut rng));
            let apply = &case.apply;
            let reduce_seed = seed ^ 0x0f0f ^ i as u64;
            let report = grad_check(
                &store,
                |t, p| {
                    let a = p.var("a")?;
                    let b = p.var("b")?;
                    let y = apply(t, a, b)?;
                    reduce_to_scalar(t, y, reduce_seed)
                },
                &GradCheckConfig { eps, tol, probes: 200, seed },
            )?;
            outcomes.push(OpCheckOutcome {
                name: format!("{} [{shape:?}]", case.name),
                max_rel_err: report.max_rel_err,
                passed: report.passed(),
            });
        }
    }
    Ok(outcomes)
}
