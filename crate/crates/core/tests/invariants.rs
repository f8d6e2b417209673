use std::sync::Arc;

use hypoparam::coefficients::CoefficientSet;
use hypoparam::kernel::{qtilde_derivative, qtilde_grad_y, AnalyticFields, DerivMode, DerivOrder};
use hypoparam::parametrix::*;
use hypoparam::transport::{FrozenFrame, OdeGridConfig};
use proptest::prelude::*;

fn light() -> PicardConfig {
    PicardConfig { quad: QuadratureSpec { time_panels: 8, ..Default::default() }, ..Default::default() }
}

fn exact_fields(horizon: f64) -> FromDerivatives<AnalyticFields> {
    let g = move |t: f64, y: &[f64]| (horizon - t) * (-(y[0] * y[0] + y[1] * y[1])).exp();
    let inner = AnalyticFields::new()
        .with_d1(move |t, y| vec![-2.0 * y[0] * g(t, y)])
        .with_d2(move |t, y| vec![-2.0 * y[1] * g(t, y)])
        .with_d11(move |t, y| vec![(4.0 * y[0] * y[0] - 2.0) * g(t, y)]);
    FromDerivatives { inner, dim: 1 }
}

#[test]
fn freezing_point_does_not_matter_for_the_solution() {
    let set = CoefficientSet::holder(0.8, 1).unwrap();
    let horizon = 0.25;
    let src = manufactured_source(&set, horizon);
    let fields = exact_fields(horizon);
    let cfg = light();
    for (t, x) in [(0.0, [0.0, 0.0]), (0.1, [1.0, -0.5]), (0.05, [-0.7, 0.3]), (0.2, [0.4, 1.1])] {
        let a = representation_rhs_frozen_at(&set, &src, &fields, t, &x, &x, horizon, &cfg).unwrap();
        let b = representation_rhs_frozen_at(&set, &src, &fields, t, &x, &[x[0] + 0.1, x[1] + 0.1], horizon, &cfg).unwrap();
        assert!((a - b).abs() <= 5.0 * cfg.tolerance, "t {t} x {x:?}: {a} vs {b}");
    }
}

#[test]
fn freezing_gap_on_grid_fields_shrinks_with_the_mesh() {
    // Stencil derivatives of a rough solution carry discretization error that
    // the two freezing choices weigh differently.
    let set = CoefficientSet::holder(0.8, 1).unwrap();
    let src = holder_source(0.8);
    let cfg = light();
    let gap = |nodes: usize| {
        let spec = GridSpec::square(0.1, 3.0, nodes, 32);
        let sol = picard_solve(&set, &src, &spec, &cfg).unwrap().solution;
        [(0.0, [0.0, 0.0]), (0.025, [1.0, -0.5]), (0.0, [0.25, 0.25])]
            .iter()
            .map(|(t, x)| {
                let a = representation_rhs_frozen_at(&set, &src, &sol, *t, x, x, 0.1, &cfg).unwrap();
                let b = representation_rhs_frozen_at(&set, &src, &sol, *t, x, &[x[0] + 0.1, x[1] + 0.1], 0.1, &cfg).unwrap();
                (a - b).abs()
            })
            .fold(0.0, f64::max)
    };
    let coarse = gap(13);
    let fine = gap(25);
    assert!(fine < coarse && coarse < 2e-3, "{coarse} {fine}");
}

#[test]
fn converged_solution_is_a_fixed_point() {
    let set = CoefficientSet::holder(0.8, 1).unwrap();
    let src = holder_source(0.8);
    let cfg = light();
    let spec = GridSpec::square(0.1, 3.0, 13, 32);
    let out = picard_solve(&set, &src, &spec, &cfg).unwrap();
    assert!(out.report.converged);
    let r = fixed_point_residual(&set, &src, &out.solution, &cfg).unwrap();
    assert!(r <= 2.0 * cfg.tolerance, "{r}");
}

#[test]
fn feynman_kac_agrees_with_quadrature() {
    let set = CoefficientSet::holder(0.8, 1).unwrap();
    let src = holder_source(0.8);
    let cfg = light();
    let x = [0.3, 0.5];
    let q = representation_rhs(&set, &src, &ZeroFields { dim: 1 }, 0.0, &x, 0.3, &cfg).unwrap();
    let mc = feynman_kac_first_term(&set, &src, 0.0, &x, 0.3, 20_000, 5, &cfg).unwrap();
    assert!((q - mc.mean).abs() <= f64::max(1e-3, 3.0 * mc.stderr), "{q} {mc:?}");
}

fn holder_frame() -> Arc<FrozenFrame> {
    let set = CoefficientSet::holder(0.8, 1).unwrap();
    Arc::new(FrozenFrame::new(&set, 0.0, &[0.3, -0.2], 1.0, OdeGridConfig::default()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn x2_and_y2_derivatives_cancel(
        t in 0.0..0.5f64, ds in 0.02..0.5f64,
        x1 in -1.5..1.5f64, x2 in -1.5..1.5f64,
        y1 in -2.0..2.0f64, y2 in -2.0..2.0f64,
    ) {
        let frame = holder_frame();
        let (x, y, s) = ([x1, x2], [y1, y2], t + ds);
        let dx2 = qtilde_derivative(&frame, t, &x, s, &y, DerivOrder::new(0, 1, 0).unwrap(), DerivMode::Analytic).unwrap().data[0];
        let dy2 = qtilde_grad_y(&frame, t, &x, s, &y).unwrap()[1];
        prop_assert!((dx2 + dy2).abs() <= 1e-12 * dx2.abs().max(1e-300) + 1e-300);
    }

    #[test]
    fn representation_is_linear_in_the_source(c in -3.0..3.0f64, x1 in -1.0..1.0f64, x2 in -1.0..1.0f64) {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let cfg = light();
        let zero = ZeroFields { dim: 1 };
        let base = holder_source(0.8);
        let b2 = base.clone();
        let scaled = source(move |s, y| c * b2(s, y));
        let x = [x1, x2];
        let a = representation_rhs(&set, &base, &zero, 0.0, &x, 0.2, &cfg).unwrap();
        let b = representation_rhs(&set, &scaled, &zero, 0.0, &x, 0.2, &cfg).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}
