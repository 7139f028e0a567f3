//! Finite-difference verification of reverse-mode gradients.
//!
//! For a scalar-valued builder `f` over a [`ParamStore`], compares the tape
//! gradient against the central difference `(f(p+e) - f(p-e)) / 2e` on a
//! random subset of trainable coordinates.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{CoreError, Result};
use crate::tensor::{ParamStore, Tape, TapeParams, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step. Must lie in `[1e-6, 1e-3]`.
    pub eps: f64,
    /// Pass iff the max relative error stays below this.
    pub tol: f64,
    /// Number of coordinates to probe (capped at the trainable total).
    pub probes: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-4, probes: 64, seed: 0x5eed }
    }
}

/// One probed coordinate.
#[derive(Clone, Debug)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
    /// Coordinates whose probes produced non-finite loss values.
    pub non_finite: Vec<(String, usize)>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_empty() && self.max_rel_err < self.tol
    }

    /// Worst probe, if any were taken.
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
    }
}

// Gradients far below this floor are compared absolutely rather than
// relatively; central differences carry ~1e-10 of absolute noise.
const REL_FLOOR: f64 = 1e-2;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn grad_check<F>(store: &ParamStore, build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &TapeParams) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&cfg.eps) {
        return Err(CoreError::contract(
            "grad_check",
            format!("eps {} outside [1e-6, 1e-3]", cfg.eps),
        ));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let params = tape.register(store);
    let loss = build(&mut tape, &params)?;
    let base = tape.scalar_value(loss);
    if !base.is_finite() {
        return Err(CoreError::contract("grad_check", format!("loss at base point is {base}")));
    }
    tape.backward(loss)?;

    // Coordinate universe: every scalar of every trainable parameter.
    let coords: Vec<(&str, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(name, p)| (0..p.value.numel()).map(move |i| (name, i)))
        .collect();
    if coords.is_empty() {
        return Err(CoreError::contract("grad_check", "store has no trainable coordinates"));
    }

    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let chosen: Vec<(&str, usize)> = if cfg.probes >= coords.len() {
        coords
    } else {
        let mut picked = Vec::with_capacity(cfg.probes);
        let mut used = std::collections::BTreeSet::new();
        while picked.len() < cfg.probes {
            let i = rng.gen_range(0..coords.len());
            if used.insert(i) {
                picked.push(coords[i]);
            }
        }
        picked
    };

    let eval = |probe_store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let p = t.register(probe_store);
        let l = build(&mut t, &p)?;
        Ok(t.scalar_value(l))
    };

    let mut report = GradCheckReport { tol: cfg.tol, ..Default::default() };
    for (name, index) in chosen {
        let plus = eval(&store.with_nudged(name, index, cfg.eps)?)?;
        let minus = eval(&store.with_nudged(name, index, -cfg.eps)?)?;
        if !plus.is_finite() || !minus.is_finite() {
            report.non_finite.push((name.to_string(), index));
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let analytic = tape
            .grad(params.var(name)?)
            .map(|g| g[index])
            .unwrap_or(0.0);
        let err = rel_err(analytic, numeric);
        report.max_rel_err = report.max_rel_err.max(err);
        report.checks.push(CoordinateCheck {
            name: name.to_string(),
            index,
            analytic,
            numeric,
            rel_err: err,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn quadratic_gradient_is_exact() {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(3);
        store.insert("theta", Tensor::randn(&[5], 1.0, &mut rng));

        let report = grad_check(
            &store,
            |t, p| {
                let x = p.var("theta")?;
                let sq = t.mul(x, x)?;
                Ok(t.sum_all(sq))
            },
            &GradCheckConfig { probes: 5, ..Default::default() },
        )
        .unwrap();

        assert!(report.passed(), "max rel err {}", report.max_rel_err);
        // Analytic 2*theta agrees with central differences essentially exactly.
        for c in &report.checks {
            assert!(
                (c.analytic - c.numeric).abs() < 1e-8,
                "{} [{}]: {} vs {}",
                c.name,
                c.index,
                c.analytic,
                c.numeric
            );
            let theta = store.value("theta").unwrap().data()[c.index];
            assert!((c.analytic - 2.0 * theta).abs() < 1e-12);
        }
    }

    #[test]
    fn eps_outside_contract_rejected() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1.0));
        let err = grad_check(
            &store,
            |t, p| {
                let x = p.var("x")?;
                Ok(t.sum_all(x))
            },
            &GradCheckConfig { eps: 1e-2, ..Default::default() },
        );
        assert!(err.is_err());
    }

    #[test]
    fn non_finite_probe_reported_not_crashed() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(0.0));
        // sqrt has a pole at 0: the minus probe goes NaN.
        let report = grad_check(
            &store,
            |t, p| {
                let x = p.var("x")?;
                let r = t.sqrt(x);
                Ok(t.sum_all(r))
            },
            &GradCheckConfig { probes: 1, ..Default::default() },
        );
        // Base loss is finite (sqrt(0) = 0) but the -eps probe is NaN.
        let report = report.unwrap();
        assert_eq!(report.non_finite.len(), 1);
        assert!(!report.passed());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // abs has a kink at 0; probing right at it makes the analytic
        // subgradient (+1) disagree with the central difference (0).
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(0.0));
        let report = grad_check(
            &store,
            |t, p| {
                let x = p.var("x")?;
                let a = t.abs(x);
                Ok(t.sum_all(a))
            },
            &GradCheckConfig { probes: 1, ..Default::default() },
        )
        .unwrap();
        assert!(!report.passed());
    }
}
