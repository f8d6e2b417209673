//! Quadrature of the representation at one space-time point.

use rayon::prelude::*;
use serde::Serialize;

use super::fields::{FieldSample, SolutionFields};
use super::integrands::{centered_terms, plain_terms, TermWorkspace};
use super::{PicardConfig, QuadratureSpec, Source};
use crate::coefficients::CoefficientSet;
use crate::kernel::{derivative_from_moments, DerivMode, DerivOrder};
use crate::quadrature::{geometric_edges, Rule};
use crate::sde::{frozen_simulate, substream};
use crate::stats::mean_and_stderr;
use crate::transport::{FrozenCoefficients, FrozenFrame};
use crate::{Error, Result};

/// Tensor rule on the whitened variable `z ∈ [-r, r]^{2d}`.
#[derive(Debug, Clone)]
pub(crate) struct SpaceRule {
    axes: usize,
    z: Vec<f64>,
    w: Vec<f64>,
}

impl SpaceRule {
    fn axis(panels: usize, per_panel: usize, radius: f64) -> Rule {
        Rule::composite_gauss(-radius, radius, panels, per_panel)
    }

    fn tensor(axis: &Rule, axes: usize, keep: impl Fn(f64) -> bool) -> Self {
        let n = axis.len();
        let total = n.pow(axes as u32);
        let mut z = Vec::new();
        let mut w = Vec::new();
        let mut idx = vec![0usize; axes];
        for _ in 0..total {
            let weight: f64 = idx.iter().map(|&i| axis.weights[i]).product();
            if keep(weight) {
                z.extend(idx.iter().map(|&i| axis.nodes[i]));
                w.push(weight);
            }
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < n {
                    break;
                }
                *slot = 0;
            }
        }
        Self { axes, z, w }
    }

    /// Weights absorb the standard normal density and are normalised to sum
    /// to one per axis, so constants integrate exactly. Points carrying less
    /// than `1e-10` of the largest weight (Gaussian mass of order `1e-10`)
    /// are dropped.
    pub(crate) fn gaussian(q: &QuadratureSpec, d: usize) -> Self {
        let mut axis = Self::axis(q.space_panels, q.space_nodes_per_panel, q.space_radius);
        for (w, z) in axis.weights.iter_mut().zip(&axis.nodes) {
            *w *= (-0.5 * z * z).exp();
        }
        let mass: f64 = axis.weights.iter().sum();
        axis.weights.iter_mut().for_each(|w| *w /= mass);
        let top = axis.weights.iter().copied().fold(0.0, f64::max).powi(2 * d as i32);
        let mut rule = Self::tensor(&axis, 2 * d, |w| w >= 1e-10 * top);
        let kept: f64 = rule.w.iter().sum();
        rule.w.iter_mut().for_each(|w| *w /= kept);
        rule
    }

    /// Plain Gauss–Legendre weights, for integrands carrying their own kernel.
    pub(crate) fn lebesgue(panels: usize, per_panel: usize, radius: f64, d: usize) -> Self {
        Self::tensor(&Self::axis(panels, per_panel, radius), 2 * d, |_| true)
    }

    /// Splits `nodes_per_axis` into panels of six (or four) nodes.
    pub(crate) fn lebesgue_for(nodes_per_axis: usize, radius: f64, d: usize) -> Result<Self> {
        if nodes_per_axis == 0 {
            return Err(Error::InvalidArgument("need at least one node per axis".into()));
        }
        let per = [6, 4, 5, 3].into_iter().find(|p| nodes_per_axis.is_multiple_of(*p)).unwrap_or(nodes_per_axis);
        Ok(Self::lebesgue(nodes_per_axis / per, per, radius, d))
    }

    pub(crate) fn len(&self) -> usize {
        self.w.len()
    }

    pub(crate) fn points(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.z.chunks(self.axes).zip(self.w.iter().copied())
    }
}

pub(crate) fn time_rule(t: f64, horizon: f64, q: &QuadratureSpec) -> Rule {
    let edges = geometric_edges(t, horizon, q.time_panels, q.time_ratio);
    Rule::gauss_on_edges(&edges, q.time_nodes_per_panel)
}

/// Everything needed at one time node: quadrature weight, mean of the
/// frozen law started at `x`, its Cholesky factor and the frozen coefficients.
pub(crate) struct TimeSlice {
    s: f64,
    w: f64,
    mean: Vec<f64>,
    lower: Vec<f64>,
    frozen: FrozenCoefficients,
}

pub(crate) struct NodePlan {
    slices: Vec<TimeSlice>,
}

pub(crate) fn build_plan(
    coeffs: &CoefficientSet,
    t: f64,
    x: &[f64],
    xi: &[f64],
    horizon: f64,
    cfg: &PicardConfig,
    space_points: usize,
) -> Result<NodePlan> {
    let d = coeffs.dim;
    if x.len() != 2 * d {
        return Err(Error::DimensionMismatch { expected: 2 * d, got: x.len() });
    }
    if t > horizon {
        return Err(Error::ReversedInterval { start: t, end: horizon });
    }
    if t == horizon {
        return Ok(NodePlan { slices: Vec::new() });
    }
    let needed = cfg.quad.time_nodes() * space_points;
    if needed > cfg.quad.budget {
        return Err(Error::QuadratureBudgetExceeded { needed, budget: cfg.quad.budget });
    }
    let frame = FrozenFrame::new(coeffs, t, xi, horizon, cfg.ode)?;
    let rule = time_rule(t, horizon, &cfg.quad);
    let n = 2 * d;
    let mut slices = Vec::with_capacity(rule.len());
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let m = frame.moments(t, s)?;
        let mut lower = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                lower[i * n + j] = m.chol.get(i, j);
            }
        }
        slices.push(TimeSlice { s, w, mean: m.mean(x), lower, frozen: frame.frozen_coefficients(s)? });
    }
    Ok(NodePlan { slices })
}

pub(crate) struct EvalWorkspace {
    y: Vec<f64>,
    sample: FieldSample,
    terms: TermWorkspace,
}

impl EvalWorkspace {
    pub(crate) fn new(d: usize) -> Self {
        Self { y: vec![0.0; 2 * d], sample: FieldSample::new(d), terms: TermWorkspace::new(d) }
    }
}

/// `Σ_s w_s Σ_z w_z [φ + (𝓛 - 𝓛̃)u](s, m + Lz)`. Without `fields` only the
/// source part is integrated.
pub(crate) fn evaluate_plan(
    coeffs: &CoefficientSet,
    plan: &NodePlan,
    rule: &SpaceRule,
    source: &Source,
    fields: Option<&dyn SolutionFields>,
    ws: &mut EvalWorkspace,
) -> Result<f64> {
    let n = ws.y.len();
    let mut total = 0.0;
    for slice in &plan.slices {
        let mut inner = 0.0;
        for (z, w) in rule.points() {
            for i in 0..n {
                let row = &slice.lower[i * n..i * n + i + 1];
                ws.y[i] = slice.mean[i] + row.iter().zip(z).map(|(l, v)| l * v).sum::<f64>();
            }
            let mut v = source(slice.s, &ws.y);
            if let Some(f) = fields {
                f.sample_into(slice.s, &ws.y, &mut ws.sample);
                let [h2, h3, h4] = plain_terms(coeffs, &slice.frozen, slice.s, &ws.y, &ws.sample, &mut ws.terms)?;
                v += h2 + h3 + h4;
            }
            inner += w * v;
        }
        total += slice.w * inner;
    }
    Ok(total)
}

/// New value of `u(t, x)` from the representation with the default freezing
/// point `ξ = x`.
#[allow(clippy::too_many_arguments)]
pub fn representation_rhs(
    coeffs: &CoefficientSet,
    source: &Source,
    fields: &dyn SolutionFields,
    t: f64,
    x: &[f64],
    horizon: f64,
    cfg: &PicardConfig,
) -> Result<f64> {
    representation_rhs_frozen_at(coeffs, source, fields, t, x, x, horizon, cfg)
}

/// As [`representation_rhs`] with an explicit freezing point.
#[allow(clippy::too_many_arguments)]
pub fn representation_rhs_frozen_at(
    coeffs: &CoefficientSet,
    source: &Source,
    fields: &dyn SolutionFields,
    t: f64,
    x: &[f64],
    xi: &[f64],
    horizon: f64,
    cfg: &PicardConfig,
) -> Result<f64> {
    cfg.validate()?;
    let d = coeffs.dim;
    if fields.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: fields.dim() });
    }
    let rule = SpaceRule::gaussian(&cfg.quad, d);
    let plan = build_plan(coeffs, t, x, xi, horizon, cfg, rule.len())?;
    let mut ws = EvalWorkspace::new(d);
    evaluate_plan(coeffs, &plan, &rule, source, Some(fields), &mut ws)
}

/// `D^o u(t, x)` computed from the representation itself.
///
/// With an `x2` derivative the centered integrands are used, including the
/// integration by parts piece against `∂_{y1} q̃`; with `x1` derivatives only
/// the source is centered at `θ_{t,s}(x)`. Returns one entry per tensor
/// component (a scalar when `d = 1`).
#[allow(clippy::too_many_arguments)]
pub fn representation_derivative(
    coeffs: &CoefficientSet,
    source: &Source,
    fields: &dyn SolutionFields,
    t: f64,
    x: &[f64],
    horizon: f64,
    order: DerivOrder,
    cfg: &PicardConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if order.n_y1 != 0 || order.total() == 0 || !order.is_admissible() {
        return Err(Error::UnsupportedOrder { n_x1: order.n_x1, n_x2: order.n_x2, n_y1: order.n_y1 });
    }
    let d = coeffs.dim;
    if x.len() != 2 * d {
        return Err(Error::DimensionMismatch { expected: 2 * d, got: x.len() });
    }
    if fields.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: fields.dim() });
    }
    let components = d.pow(order.total() as u32);
    let mut acc = vec![0.0; components];
    if t >= horizon {
        return Ok(acc);
    }
    let frame = FrozenFrame::new(coeffs, t, x, horizon, cfg.ode)?;
    let time = time_rule(t, horizon, &cfg.quad);
    let space = SpaceRule::lebesgue(2 * cfg.quad.space_panels, cfg.quad.space_nodes_per_panel, cfg.quad.space_radius, d);
    let ibp_order = DerivOrder { n_y1: 1, ..order };
    let centered = order.n_x2 > 0;
    let n = 2 * d;
    let mut ws = TermWorkspace::new(d);
    let mut sample = FieldSample::new(d);
    let mut y = vec![0.0; n];
    for (&s, &ws_t) in time.nodes.iter().zip(&time.weights) {
        let m = frame.moments(t, s)?;
        let fc = frame.frozen_coefficients(s)?;
        let mean = m.mean(x);
        let jac: f64 = (0..n).map(|i| m.chol.get(i, i)).product();
        let phi_theta = source(s, &fc.theta);
        for (z, w) in space.points() {
            for i in 0..n {
                y[i] = mean[i] + (0..=i).map(|j| m.chol.get(i, j) * z[j]).sum::<f64>();
            }
            fields.sample_into(s, &y, &mut sample);
            let (sum, ibp) = if centered {
                let terms = centered_terms(coeffs, &fc, source, fields, s, &y, &sample, &mut ws)?;
                (terms.sum(), terms.h2_ibp)
            } else {
                let [h2, h3, h4] = plain_terms(coeffs, &fc, s, &y, &sample, &mut ws)?;
                (source(s, &y) - phi_theta + h2 + h3 + h4, Vec::new())
            };
            let scale = ws_t * w * jac;
            let k = derivative_from_moments(&m, x, &y, order, DerivMode::Analytic);
            for (a, kv) in acc.iter_mut().zip(&k.data) {
                *a += scale * sum * kv;
            }
            if ibp.iter().any(|v| *v != 0.0) {
                let k2 = derivative_from_moments(&m, x, &y, ibp_order, DerivMode::Analytic);
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += scale * (0..d).map(|l| ibp[l] * k2.data[c * d + l]).sum::<f64>();
                }
            }
        }
    }
    Ok(acc)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

/// `E ∫_t^T φ(s, X̃_s) ds` by exact draws of the frozen law at the time
/// quadrature nodes. Path `p` uses stream `p` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_first_term(
    coeffs: &CoefficientSet,
    source: &Source,
    t: f64,
    x: &[f64],
    horizon: f64,
    n_paths: usize,
    seed: u64,
    cfg: &PicardConfig,
) -> Result<McEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    if t >= horizon {
        return Ok(McEstimate { mean: 0.0, stderr: 0.0, n_paths });
    }
    let frame = FrozenFrame::new(coeffs, t, x, horizon, cfg.ode)?;
    let rule = time_rule(t, horizon, &cfg.quad);
    for &s in &rule.nodes {
        frame.moments(t, s)?;
    }
    let values: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = substream(seed, 0, p);
            let mut v = 0.0;
            for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
                let state = frozen_simulate(&frame, x, t, s, &mut rng)?;
                v += w * source(s, &state);
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    Ok(McEstimate { mean, stderr, n_paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::AnalyticFields;
    use crate::parametrix::{holder_source, source, FromDerivatives, ZeroFields};

    fn quick() -> PicardConfig {
        PicardConfig::default()
    }

    #[test]
    fn gaussian_rule_moments() {
        let rule = SpaceRule::gaussian(&QuadratureSpec::default(), 1);
        let mass: f64 = rule.points().map(|(_, w)| w).sum();
        assert!((mass - 1.0).abs() < 1e-14);
        let m2: f64 = rule.points().map(|(z, w)| w * z[0] * z[0]).sum();
        let cross: f64 = rule.points().map(|(z, w)| w * z[0] * z[1]).sum();
        assert!((m2 - 1.0).abs() < 5e-4, "{m2}");
        assert!(cross.abs() < 1e-14);
        assert!(rule.len() < 576);
    }

    #[test]
    fn zero_source_and_fields_give_zero() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let zero = source(|_, _| 0.0);
        let v = representation_rhs(&set, &zero, &ZeroFields { dim: 1 }, 0.1, &[0.3, -0.2], 0.5, &quick()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn unit_source_integrates_to_elapsed_time() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let one = source(|_, _| 1.0);
        let v = representation_rhs(&set, &one, &ZeroFields { dim: 1 }, 0.1, &[0.3, -0.2], 0.6, &quick()).unwrap();
        assert!((v - 0.5).abs() < 1e-4, "{v}");
    }

    #[test]
    fn first_coordinate_source_gives_mean() {
        let set = CoefficientSet::linear_gamma(vec![1.0], 0.0).unwrap();
        let phi = source(|_, y| y[0]);
        let x = [0.7, -0.4];
        let v = representation_rhs(&set, &phi, &ZeroFields { dim: 1 }, 0.2, &x, 1.0, &quick()).unwrap();
        assert!((v - 0.8 * 0.7).abs() < 1e-4, "{v}");
    }

    #[test]
    fn budget_is_enforced() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let mut cfg = quick();
        cfg.quad.budget = 100;
        let r = representation_rhs(&set, &holder_source(0.8), &ZeroFields { dim: 1 }, 0.0, &[0.0, 0.0], 0.5, &cfg);
        assert!(matches!(r, Err(Error::QuadratureBudgetExceeded { budget: 100, .. })));
    }

    #[test]
    fn monte_carlo_first_term() {
        let set = CoefficientSet::linear_gamma(vec![1.0], 0.0).unwrap();
        let cfg = quick();
        let one = source(|_, _| 1.0);
        let e = feynman_kac_first_term(&set, &one, 0.1, &[0.2, 0.3], 0.6, 50, 3, &cfg).unwrap();
        assert!((e.mean - 0.5).abs() < 1e-12 && e.stderr < 1e-12);

        let phi = source(|_, y| y[0]);
        let x = [0.7, -0.4];
        let e = feynman_kac_first_term(&set, &phi, 0.0, &x, 1.0, 10_000, 11, &cfg).unwrap();
        assert!((e.mean - 0.7).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn monte_carlo_matches_quadrature_on_holder_preset() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let cfg = quick();
        let phi = holder_source(0.8);
        let x = [0.4, 0.3];
        let q = representation_rhs(&set, &phi, &ZeroFields { dim: 1 }, 0.0, &x, 0.5, &cfg).unwrap();
        let e = feynman_kac_first_term(&set, &phi, 0.0, &x, 0.5, 20_000, 5, &cfg).unwrap();
        assert!((q - e.mean).abs() < (3.0 * e.stderr).max(1e-3), "{q} vs {e:?}");
    }

    #[test]
    fn centered_derivative_of_linear_source() {
        // φ = y2: D_{x2} of ∫∫ y2 q̃ = ∫ ∂m2/∂x2 ds = T - t, by either form.
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let cfg = quick();
        let phi = source(|_, y| y[1]);
        let zero = ZeroFields { dim: 1 };
        let x = [0.3, 0.5];
        let o = DerivOrder::new(0, 1, 0).unwrap();
        let centered = representation_derivative(&set, &phi, &zero, 0.0, &x, 0.5, o, &cfg).unwrap()[0];
        assert!((centered - 0.5).abs() < 1e-3, "{centered}");

        // The plain form, integrated directly against the kernel derivative.
        let frame = FrozenFrame::new(&set, 0.0, &x, 0.5, cfg.ode).unwrap();
        let time = time_rule(0.0, 0.5, &cfg.quad);
        let space = SpaceRule::lebesgue(8, 6, 8.0, 1);
        let mut plain = 0.0;
        for (&s, &wt) in time.nodes.iter().zip(&time.weights) {
            let m = frame.moments(0.0, s).unwrap();
            let mean = m.mean(&x);
            let jac = m.chol.get(0, 0) * m.chol.get(1, 1);
            for (z, w) in space.points() {
                let y = [mean[0] + m.chol.get(0, 0) * z[0], mean[1] + m.chol.get(1, 0) * z[0] + m.chol.get(1, 1) * z[1]];
                plain += wt * w * jac * y[1] * derivative_from_moments(&m, &x, &y, o, DerivMode::Analytic).data[0];
            }
        }
        assert!((plain - centered).abs() < 1e-3, "{plain} vs {centered}");
    }

    #[test]
    fn derivative_of_smooth_fields_matches_difference_quotient() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let cfg = quick();
        let phi = holder_source(0.8);
        let u = FromDerivatives {
            inner: AnalyticFields::new()
                .with_d1(|_, x| vec![-0.2 * x[0] * (-0.1 * (x[0] * x[0] + x[1] * x[1])).exp()])
                .with_d2(|_, x| vec![-0.2 * x[1] * (-0.1 * (x[0] * x[0] + x[1] * x[1])).exp()])
                .with_d11(|_, _| vec![0.0]),
            dim: 1,
        };
        let x = [0.3, 0.4];
        let o = DerivOrder::new(0, 1, 0).unwrap();
        let direct = representation_derivative(&set, &phi, &u, 0.0, &x, 0.25, o, &cfg).unwrap()[0];
        let h = 1e-3;
        // Keep the freezing point fixed so only the kernel moves.
        let up = representation_rhs_frozen_at(&set, &phi, &u, 0.0, &[x[0], x[1] + h], &x, 0.25, &cfg).unwrap();
        let dn = representation_rhs_frozen_at(&set, &phi, &u, 0.0, &[x[0], x[1] - h], &x, 0.25, &cfg).unwrap();
        let fd = (up - dn) / (2.0 * h);
        assert!((direct - fd).abs() < 2e-3 * (1.0 + fd.abs()), "{direct} vs {fd}");
    }
}
