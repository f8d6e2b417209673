//! Picard iteration of the representation on a grid.

use rayon::prelude::*;
use serde::Serialize;

use super::fields::SolutionFields;
use super::grid::{GridSolution, GridSpec};
use super::representation::{build_plan, evaluate_plan, EvalWorkspace, SpaceRule};
use super::{source, PicardConfig, Source};
use crate::coefficients::CoefficientSet;
use crate::kernel::apply_generator;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// Sup-grid change of each iterate; the first entry is `sup|u¹|`.
    pub changes: Vec<f64>,
    /// `changes[k] / changes[k-1]`, starting at the second iterate.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub final_change: f64,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub solution: GridSolution,
    pub report: PicardReport,
}

/// Evaluates the representation at every non-terminal node, with `fields`
/// supplying the derivatives of the previous iterate (`None` for `u ≡ 0`).
fn sweep(
    coeffs: &CoefficientSet,
    src: &Source,
    spec: &GridSpec,
    cfg: &PicardConfig,
    rule: &SpaceRule,
    fields: Option<&GridSolution>,
) -> Result<Vec<f64>> {
    let times = spec.times();
    let x1 = spec.x1.points();
    let x2 = spec.x2.points();
    let per_slice = spec.space_nodes();
    let active = spec.time_steps * per_slice;
    let mut values: Vec<f64> = (0..active)
        .into_par_iter()
        .map_init(
            || EvalWorkspace::new(1),
            |ws, p| {
                let k = p / per_slice;
                let r = p % per_slice;
                let x = [x1[r / x2.len()], x2[r % x2.len()]];
                let plan = build_plan(coeffs, times[k], &x, &x, spec.horizon, cfg, rule.len())?;
                evaluate_plan(coeffs, &plan, rule, src, fields.map(|f| f as &dyn SolutionFields), ws)
            },
        )
        .collect::<Result<_>>()?;
    // The terminal slice is exactly zero.
    values.resize(active + per_slice, 0.0);
    Ok(values)
}

fn sup_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Iterates `u^{k+1} = Φ(u^k)` from `u⁰ ≡ 0` until the sup-grid change drops
/// below `cfg.tolerance`.
///
/// Three consecutive change ratios above one abort with `NoContraction`.
/// Running out of iterations is not an error; see `report.converged`.
pub fn picard_solve(coeffs: &CoefficientSet, src: &Source, spec: &GridSpec, cfg: &PicardConfig) -> Result<PicardOutcome> {
    if coeffs.dim != 1 {
        return Err(Error::UnsupportedDimension(coeffs.dim));
    }
    spec.validate()?;
    cfg.validate()?;
    let rule = SpaceRule::gaussian(&cfg.quad, 1);
    let zeros = vec![0.0; (spec.time_steps + 1) * spec.space_nodes()];
    let mut current = GridSolution::from_values(*spec, coeffs.holder, zeros)?;
    let mut changes: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut converged = false;
    for it in 1..=cfg.max_iterations {
        let fields = if it == 1 { None } else { Some(&current) };
        let next = sweep(coeffs, src, spec, cfg, &rule, fields)?;
        let change = sup_change(&next, &current.u);
        if let Some(prev) = changes.last() {
            ratios.push(if *prev > 0.0 { change / prev } else { 0.0 });
        }
        changes.push(change);
        if ratios.len() >= 3 && ratios[ratios.len() - 3..].iter().all(|r| *r > 1.0) {
            return Err(Error::NoContraction { iteration: it, ratios });
        }
        current = GridSolution::from_values(*spec, coeffs.holder, next)?;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let report = PicardReport {
        iterations: changes.len(),
        final_change: *changes.last().unwrap_or(&0.0),
        changes,
        ratios,
        converged,
    };
    Ok(PicardOutcome { solution: current, report })
}

/// `sup |u - Φ(u)|` over the non-terminal nodes.
pub fn fixed_point_residual(
    coeffs: &CoefficientSet,
    src: &Source,
    sol: &GridSolution,
    cfg: &PicardConfig,
) -> Result<f64> {
    if coeffs.dim != 1 {
        return Err(Error::UnsupportedDimension(coeffs.dim));
    }
    let rule = SpaceRule::gaussian(&cfg.quad, 1);
    let next = sweep(coeffs, src, &sol.spec, cfg, &rule, Some(sol))?;
    Ok(sup_change(&next, &sol.u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeResidual {
    /// `max |∂_t u + 𝓛u + φ|` over interior nodes.
    pub max_abs: f64,
    /// `max |φ|` over the same nodes.
    pub max_source: f64,
    pub relative: f64,
}

/// Residual of the equation with the time derivative taken from grid
/// differences and `𝓛u` from the stencil fields.
pub fn pde_residual(coeffs: &CoefficientSet, src: &Source, sol: &GridSolution) -> Result<PdeResidual> {
    let nt = sol.times.len();
    let (n1, n2) = (sol.x1.len(), sol.x2.len());
    let mut max_abs = 0.0f64;
    let mut max_source = 0.0f64;
    for k in 0..nt {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(nt - 1));
        let dt = sol.times[hi] - sol.times[lo];
        for i in 1..n1 - 1 {
            for j in 1..n2 - 1 {
                let x = [sol.x1[i], sol.x2[j]];
                let t = sol.times[k];
                let du = (sol.u[sol.index(hi, i, j)] - sol.u[sol.index(lo, i, j)]) / dt;
                let phi = src(t, &x);
                let r = du + apply_generator(coeffs, sol, t, &x)? + phi;
                max_abs = max_abs.max(r.abs());
                max_source = max_source.max(phi.abs());
            }
        }
    }
    let relative = if max_source > 0.0 { max_abs / max_source } else { max_abs };
    Ok(PdeResidual { max_abs, max_source, relative })
}

/// `u*(t, x) = (T - t)·exp(-|x|²)`.
pub fn manufactured_solution(horizon: f64) -> impl Fn(f64, &[f64]) -> f64 + Send + Sync + Clone {
    move |t, x| (horizon - t) * (-x.iter().map(|v| v * v).sum::<f64>()).exp()
}

/// `φ = -(∂_t u* + 𝓛u*)`, so that `u*` solves the equation.
pub fn manufactured_source(coeffs: &CoefficientSet, horizon: f64) -> Source {
    let set = coeffs.clone();
    source(move |t, x| {
        let d = set.dim;
        // Stack buffers cover d ≤ 2; larger systems fall back to the heap.
        let mut stack = [0.0; 16];
        let mut heap = Vec::new();
        let buf: &mut [f64] = if 2 * d + 2 * d * d <= stack.len() {
            &mut stack
        } else {
            heap.resize(2 * d + 2 * d * d, 0.0);
            &mut heap
        };
        let (b, rest) = buf.split_at_mut(2 * d);
        let (sig, rest) = rest.split_at_mut(d * d);
        let a = &mut rest[..d * d];
        let (x1, x2) = x.split_at(d);
        {
            let (b1, b2) = b.split_at_mut(d);
            set.eval_f1(t, x1, x2, b1);
            set.eval_f2(t, x1, x2, b2);
        }
        set.eval_a(t, x1, x2, sig, a);
        let e = (-x.iter().map(|v| v * v).sum::<f64>()).exp();
        let u = (horizon - t) * e;
        let mut gen = 0.0;
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 2.0 } else { 0.0 };
                gen += 0.5 * a[i * d + j] * (4.0 * x[i] * x[j] - delta) * u;
            }
            gen += b[i] * (-2.0 * x[i] * u) + b[d + i] * (-2.0 * x[d + i] * u);
        }
        e - gen
    })
}
