//! The four integrands of the representation and their centered forms.

use serde::Serialize;

use super::fields::{FieldSample, SolutionFields};
use super::representation::SpaceRule;
use super::Source;
use crate::coefficients::CoefficientSet;
use crate::gaussian::FiniteDiffScheme;
use crate::kernel::{derivative_from_moments, DerivMode, DerivOrder};
use crate::transport::{FrozenCoefficients, FrozenFrame};
use crate::{Error, Result};

/// `h[0..4]` are integrated against `q̃` (or its `x`-derivative). In centered
/// mode `h2_ibp[l]` is the extra piece of the second term that goes against
/// `∂_{y1l} q̃`; in plain mode it is empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrandTerms {
    pub h: [f64; 4],
    pub h2_ibp: Vec<f64>,
}

impl IntegrandTerms {
    pub fn sum(&self) -> f64 {
        self.h.iter().sum()
    }
}

/// Scratch buffers for the coefficient evaluations of one integrand.
pub(crate) struct TermWorkspace {
    d: usize,
    f1: Vec<f64>,
    f2: Vec<f64>,
    sig: Vec<f64>,
    a: Vec<f64>,
    yc: Vec<f64>,
    f1c: Vec<f64>,
    f2c: Vec<f64>,
    ac: Vec<f64>,
    ap: Vec<f64>,
    am: Vec<f64>,
    div: Vec<f64>,
    sample_c: FieldSample,
}

impl TermWorkspace {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            d,
            f1: vec![0.0; d],
            f2: vec![0.0; d],
            sig: vec![0.0; d * d],
            a: vec![0.0; d * d],
            yc: vec![0.0; 2 * d],
            f1c: vec![0.0; d],
            f2c: vec![0.0; d],
            ac: vec![0.0; d * d],
            ap: vec![0.0; d * d],
            am: vec![0.0; d * d],
            div: vec![0.0; d],
            sample_c: FieldSample::new(d),
        }
    }
}

fn require(flag: bool, name: &'static str) -> Result<()> {
    if flag {
        Ok(())
    } else {
        Err(Error::MissingDerivativeField(name))
    }
}

/// Plain second, third and fourth terms: `(𝓛 - 𝓛̃)u` split by operator part.
pub(crate) fn plain_terms(
    coeffs: &CoefficientSet,
    fc: &FrozenCoefficients,
    s: f64,
    y: &[f64],
    u: &FieldSample,
    ws: &mut TermWorkspace,
) -> Result<[f64; 3]> {
    let d = ws.d;
    let (y1, y2) = y.split_at(d);
    coeffs.eval_f1(s, y1, y2, &mut ws.f1);
    coeffs.eval_f2(s, y1, y2, &mut ws.f2);
    coeffs.eval_a(s, y1, y2, &mut ws.sig, &mut ws.a);

    let mut h2 = 0.0;
    let mut h3 = 0.0;
    let mut h4 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let da = ws.a[i * d + j] - fc.a[i * d + j];
            if da != 0.0 {
                require(u.available[2], "D1^2")?;
                h2 += 0.5 * da * u.d11[j * d + i];
            }
        }
        let df1 = ws.f1[i] - fc.f1[i];
        if df1 != 0.0 {
            require(u.available[0], "D1")?;
            h3 += df1 * u.d1[i];
        }
        let mut df2 = ws.f2[i] - fc.f2[i];
        for j in 0..d {
            df2 -= fc.d1f2[i * d + j] * (y1[j] - fc.theta[j]);
        }
        if df2 != 0.0 {
            require(u.available[1], "D2")?;
            h4 += df2 * u.d2[i];
        }
    }
    Ok([h2, h3, h4])
}

/// Centered forms around `ζ = θ_{t,s}(ξ)`, with `y_c = (y1, ζ2)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn centered_terms(
    coeffs: &CoefficientSet,
    fc: &FrozenCoefficients,
    source: &Source,
    fields: &dyn SolutionFields,
    s: f64,
    y: &[f64],
    u: &FieldSample,
    ws: &mut TermWorkspace,
) -> Result<IntegrandTerms> {
    let d = ws.d;
    ws.yc[..d].copy_from_slice(&y[..d]);
    ws.yc[d..].copy_from_slice(&fc.theta[d..]);
    let (y1, y2) = y.split_at(d);
    coeffs.eval_f1(s, y1, y2, &mut ws.f1);
    coeffs.eval_f2(s, y1, y2, &mut ws.f2);
    coeffs.eval_a(s, y1, y2, &mut ws.sig, &mut ws.a);
    {
        let (c1, c2) = ws.yc.split_at(d);
        coeffs.eval_f1(s, c1, c2, &mut ws.f1c);
        coeffs.eval_f2(s, c1, c2, &mut ws.f2c);
        coeffs.eval_a(s, c1, c2, &mut ws.sig, &mut ws.ac);
    }
    fields.sample_into(s, &ws.yc, &mut ws.sample_c);
    let uc = &ws.sample_c;

    // Σ_l ∂_{y1l} a_{lk} at y_c by central differences.
    let scheme = FiniteDiffScheme::first();
    ws.div.fill(0.0);
    for l in 0..d {
        let h = scheme.step(ws.yc[l]);
        let mut p = ws.yc.clone();
        let mut m = ws.yc.clone();
        p[l] += h;
        m[l] -= h;
        coeffs.eval_a(s, &p[..d], &p[d..], &mut ws.sig, &mut ws.ap);
        coeffs.eval_a(s, &m[..d], &m[d..], &mut ws.sig, &mut ws.am);
        for k in 0..d {
            ws.div[k] += (ws.ap[l * d + k] - ws.am[l * d + k]) / (2.0 * h);
        }
    }

    let h1 = source(s, y) - source(s, &ws.yc);

    let mut h2 = 0.0;
    let mut h2_ibp = vec![0.0; d];
    let mut h3 = 0.0;
    let mut h4 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let da2 = ws.a[i * d + j] - ws.ac[i * d + j];
            if da2 != 0.0 {
                require(u.available[2], "D1^2")?;
                h2 += 0.5 * da2 * u.d11[j * d + i];
            }
        }
        let dd1 = u.d1[i] - uc.d1[i];
        if ws.div[i] != 0.0 {
            require(u.available[0] && uc.available[0], "D1")?;
            h2 -= 0.5 * ws.div[i] * dd1;
        }
        for k in 0..d {
            let da1 = ws.ac[i * d + k] - fc.a[i * d + k];
            if da1 != 0.0 {
                require(u.available[0] && uc.available[0], "D1")?;
                h2_ibp[i] -= 0.5 * da1 * (u.d1[k] - uc.d1[k]);
            }
        }

        let f1_second = ws.f1[i] - ws.f1c[i];
        let f1_first = ws.f1c[i] - fc.f1[i];
        if f1_second != 0.0 || f1_first != 0.0 {
            require(u.available[0] && uc.available[0], "D1")?;
            h3 += f1_second * u.d1[i] + f1_first * dd1;
        }

        let f2_second = ws.f2[i] - ws.f2c[i];
        let mut f2_first = ws.f2c[i] - fc.f2[i];
        for j in 0..d {
            f2_first -= fc.d1f2[i * d + j] * (y1[j] - fc.theta[j]);
        }
        if f2_second != 0.0 || f2_first != 0.0 {
            require(u.available[1] && uc.available[1], "D2")?;
            h4 += f2_first * (u.d2[i] - uc.d2[i]) + f2_second * u.d2[i];
        }
    }
    Ok(IntegrandTerms { h: [h1, h2, h3, h4], h2_ibp })
}

/// Evaluates the four integrands at `(s, y)` for the frame's transport.
pub fn integrand_terms(
    frame: &FrozenFrame,
    source: &Source,
    fields: &dyn SolutionFields,
    s: f64,
    y: &[f64],
    centered: bool,
) -> Result<IntegrandTerms> {
    let d = frame.dim();
    if y.len() != 2 * d {
        return Err(Error::DimensionMismatch { expected: 2 * d, got: y.len() });
    }
    if fields.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: fields.dim() });
    }
    let fc = frame.frozen_coefficients(s)?;
    let mut ws = TermWorkspace::new(d);
    let mut sample = FieldSample::new(d);
    fields.sample_into(s, y, &mut sample);
    if centered {
        centered_terms(frame.coeffs(), &fc, source, fields, s, y, &sample, &mut ws)
    } else {
        let [h2, h3, h4] = plain_terms(frame.coeffs(), &fc, s, y, &sample, &mut ws)?;
        Ok(IntegrandTerms { h: [source(s, y), h2, h3, h4], h2_ibp: Vec::new() })
    }
}

/// The three centering identities for `x`-differentiated integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CenteringVariant {
    /// Subtract `f(s, ζ)`; needs at least one `x` derivative.
    A,
    /// Subtract `f(s, y1, ζ2)`; needs an `x2` derivative.
    B,
    /// Replace `g` by `g(y) - g(y1, ζ2)` next to `f(y1, ζ2) - f(ζ)`; needs an
    /// `x2` derivative.
    C,
}

impl CenteringVariant {
    pub fn letter(&self) -> char {
        match self {
            CenteringVariant::A => 'a',
            CenteringVariant::B => 'b',
            CenteringVariant::C => 'c',
        }
    }

    pub fn parse(c: char) -> Result<Self> {
        match c {
            'a' => Ok(CenteringVariant::A),
            'b' => Ok(CenteringVariant::B),
            'c' => Ok(CenteringVariant::C),
            other => Err(Error::InadmissibleVariant { variant: other }),
        }
    }
}

/// `|D^o ∫ lhs q̃ dy - D^o ∫ rhs q̃ dy|`, maximised over tensor components,
/// with `nodes_per_axis` Gauss–Legendre nodes per whitened axis.
///
/// `zeta` defaults to `θ_{t,s}(ξ)`.
#[allow(clippy::too_many_arguments)]
pub fn centering_check(
    frame: &FrozenFrame,
    t: f64,
    x: &[f64],
    s: f64,
    f: &dyn Fn(f64, &[f64]) -> f64,
    g: &dyn Fn(f64, &[f64]) -> f64,
    order: DerivOrder,
    variant: CenteringVariant,
    zeta: Option<&[f64]>,
    nodes_per_axis: usize,
) -> Result<f64> {
    let ok = match variant {
        CenteringVariant::A => order.n_x1 + order.n_x2 > 0,
        CenteringVariant::B | CenteringVariant::C => order.n_x2 > 0,
    };
    if !ok {
        return Err(Error::InadmissibleVariant { variant: variant.letter() });
    }
    if !order.is_admissible() {
        return Err(Error::UnsupportedOrder { n_x1: order.n_x1, n_x2: order.n_x2, n_y1: order.n_y1 });
    }
    let d = frame.dim();
    if x.len() != 2 * d {
        return Err(Error::DimensionMismatch { expected: 2 * d, got: x.len() });
    }
    if t >= s {
        return Err(Error::ReversedInterval { start: t, end: s });
    }
    let zeta = match zeta {
        Some(z) => z.to_vec(),
        None => frame.theta(s)?,
    };
    let m = frame.moments(t, s)?;
    let rule = SpaceRule::lebesgue_for(nodes_per_axis, 8.0, d)?;
    let mean = m.mean(x);
    let jac = (0..2 * d).map(|i| m.chol.get(i, i)).product::<f64>();

    let n = 2 * d;
    let mut y = vec![0.0; n];
    let mut yc = vec![0.0; n];
    let f_zeta = f(s, &zeta);
    let mut lhs: Vec<f64> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (z, w) in rule.points() {
        for i in 0..n {
            y[i] = mean[i] + (0..=i).map(|j| m.chol.get(i, j) * z[j]).sum::<f64>();
        }
        yc[..d].copy_from_slice(&y[..d]);
        yc[d..].copy_from_slice(&zeta[d..]);
        let (l, r) = match variant {
            CenteringVariant::A => {
                let v = f(s, &y);
                (v, v - f_zeta)
            }
            CenteringVariant::B => {
                let v = f(s, &y);
                (v, v - f(s, &yc))
            }
            CenteringVariant::C => {
                let first = f(s, &yc) - f_zeta;
                let gv = g(s, &y);
                (first * gv, first * (gv - g(s, &yc)))
            }
        };
        let k = derivative_from_moments(&m, x, &y, order, DerivMode::Analytic);
        if lhs.is_empty() {
            lhs = vec![0.0; k.data.len()];
            rhs = vec![0.0; k.data.len()];
        }
        for (c, kv) in k.data.iter().enumerate() {
            lhs[c] += w * jac * l * kv;
            rhs[c] += w * jac * r * kv;
        }
    }
    Ok(lhs.iter().zip(&rhs).fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{field, identity_matrix, CoefficientSet};
    use crate::kernel::AnalyticFields;
    use crate::parametrix::fields::FromDerivatives;
    use crate::parametrix::{holder_source, source};
    use crate::transport::OdeGridConfig;

    fn analytic_u() -> FromDerivatives<AnalyticFields> {
        let inner = AnalyticFields::new()
            .with_d1(|_, x| vec![(x[0] * 0.7).cos() + x[1]])
            .with_d2(|_, x| vec![x[0] - 0.3 * x[1]])
            .with_d11(|_, x| vec![-0.7 * (x[0] * 0.7).sin()]);
        FromDerivatives { inner, dim: 1 }
    }

    #[test]
    fn exact_linearization_has_no_perturbation() {
        let set = CoefficientSet::linear_gamma(vec![1.5], 0.0).unwrap();
        let frame = FrozenFrame::new(&set, 0.0, &[0.4, -0.3], 1.0, OdeGridConfig::default()).unwrap();
        let u = analytic_u();
        let phi = holder_source(0.8);
        for (s, y) in [(0.2, [1.0, 2.0]), (0.7, [-1.3, 0.4]), (1.0, [3.0, -2.5])] {
            let terms = integrand_terms(&frame, &phi, &u, s, &y, false).unwrap();
            for h in &terms.h[1..] {
                assert!(h.abs() < 1e-12, "{terms:?}");
            }
        }
    }

    #[test]
    fn centered_first_term_vanishes_on_transport() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let frame = FrozenFrame::new(&set, 0.0, &[0.4, -0.3], 1.0, OdeGridConfig::default()).unwrap();
        let theta = frame.theta(0.5).unwrap();
        let phi = holder_source(0.8);
        let terms = integrand_terms(&frame, &phi, &analytic_u(), 0.5, &[1.7, theta[1]], true).unwrap();
        assert_eq!(terms.h[0], 0.0);
        // Every centered term carries a Δ² factor.
        for h in &terms.h {
            assert!(h.abs() < 1e-12);
        }
    }

    #[test]
    fn centered_and_plain_split_agree_in_sum_for_value_parts() {
        // Without the integration by parts piece the centered third and
        // fourth terms differ from the plain ones only by Δ¹·g(y1, ζ2).
        let set = CoefficientSet::from_fields(
            "varying",
            1,
            field(|_, x1, x2, o| o[0] = 0.2 * x1[0].sin() + 0.1 * x2[0].cos()),
            field(|_, x1, x2, o| o[0] = x1[0] + 0.3 * x2[0].abs().powf(0.8)),
            identity_matrix(1),
            None,
        );
        let frame = FrozenFrame::new(&set, 0.0, &[0.1, 0.2], 1.0, OdeGridConfig::default()).unwrap();
        let u = analytic_u();
        let phi = source(|_, y| y[1]);
        let (s, y) = (0.6, [0.9, -0.4]);
        let plain = integrand_terms(&frame, &phi, &u, s, &y, false).unwrap();
        let cent = integrand_terms(&frame, &phi, &u, s, &y, true).unwrap();
        let theta = frame.theta(s).unwrap();
        let yc = [y[0], theta[1]];
        let mut uc = crate::parametrix::FieldSample::new(1);
        u.sample_into(s, &yc, &mut uc);
        let mut f1 = [0.0];
        set.eval_f1(s, &yc[..1], &yc[1..], &mut f1);
        let fc = frame.frozen_coefficients(s).unwrap();
        let missing3 = (f1[0] - fc.f1[0]) * uc.d1[0];
        assert!((plain.h[2] - cent.h[2] - missing3).abs() < 1e-12);
        let mut f2 = [0.0];
        set.eval_f2(s, &yc[..1], &yc[1..], &mut f2);
        let missing4 = (f2[0] - fc.f2[0] - fc.d1f2[0] * (y[0] - theta[0])) * uc.d2[0];
        assert!((plain.h[3] - cent.h[3] - missing4).abs() < 1e-12);
        assert_eq!(cent.h[0], y[1] - theta[1]);
    }

    #[test]
    fn missing_fields_only_matter_when_used() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let frame = FrozenFrame::new(&set, 0.0, &[0.0, 0.0], 1.0, OdeGridConfig::default()).unwrap();
        let only_d2 = FromDerivatives { inner: AnalyticFields::new().with_d2(|_, _| vec![1.0]), dim: 1 };
        let phi = holder_source(0.8);
        assert!(integrand_terms(&frame, &phi, &only_d2, 0.5, &[0.3, 0.7], false).is_ok());
        let only_d1 = FromDerivatives { inner: AnalyticFields::new().with_d1(|_, _| vec![1.0]), dim: 1 };
        assert_eq!(
            integrand_terms(&frame, &phi, &only_d1, 0.5, &[0.3, 0.7], false),
            Err(Error::MissingDerivativeField("D2"))
        );
    }

    fn kolmogorov_frame() -> FrozenFrame {
        let set = CoefficientSet::from_fields(
            "drifted",
            1,
            field(|t, x1, _, o| o[0] = -0.3 * x1[0] + t),
            field(|_, x1, x2, o| o[0] = x1[0] + 0.2 * x2[0].sin()),
            field(|_, x1, _, o| o[0] = 1.0 + 0.2 * x1[0].cos()),
            None,
        );
        FrozenFrame::new(&set, 0.0, &[0.2, -0.1], 1.0, OdeGridConfig::default()).unwrap()
    }

    #[test]
    fn centering_constant_and_preconditions() {
        let fr = kolmogorov_frame();
        let x = [0.2, -0.1];
        let c = |_: f64, _: &[f64]| 2.5;
        let one = |_: f64, _: &[f64]| 1.0;
        let o = DerivOrder::new(1, 0, 0).unwrap();
        let r = centering_check(&fr, 0.0, &x, 0.5, &c, &one, o, CenteringVariant::A, None, 48).unwrap();
        assert!(r < 1e-8, "{r}");
        assert_eq!(
            centering_check(&fr, 0.0, &x, 0.5, &c, &one, o, CenteringVariant::B, None, 48),
            Err(Error::InadmissibleVariant { variant: 'b' })
        );
        assert_eq!(
            centering_check(&fr, 0.0, &x, 0.5, &c, &one, DerivOrder::VALUE, CenteringVariant::A, None, 48),
            Err(Error::InadmissibleVariant { variant: 'a' })
        );
    }

    #[test]
    fn centering_identities_hold_under_quadrature() {
        let fr = kolmogorov_frame();
        let x = [0.2, -0.1];
        let dx2 = DerivOrder::new(0, 1, 0).unwrap();
        let sq = |_: f64, y: &[f64]| y[1] * y[1];
        let cst = |_: f64, _: &[f64]| 3.0;
        let wavy = |s: f64, y: &[f64]| (y[0] + s).sin() * y[1];
        let rb = centering_check(&fr, 0.0, &x, 0.5, &sq, &cst, dx2, CenteringVariant::B, None, 48).unwrap();
        assert!(rb < 1e-3, "{rb}");
        let rc = centering_check(&fr, 0.0, &x, 0.5, &wavy, &cst, dx2, CenteringVariant::C, None, 48).unwrap();
        assert!(rc < 1e-3, "{rc}");
        let rc2 = centering_check(&fr, 0.0, &x, 0.5, &wavy, &sq, dx2, CenteringVariant::C, None, 48).unwrap();
        assert!(rc2 < 1e-3, "{rc2}");
        // An arbitrary centering point works as well.
        let other = [1.0, -2.0];
        for o in [dx2, DerivOrder::new(1, 1, 0).unwrap()] {
            let r = centering_check(&fr, 0.0, &x, 0.5, &wavy, &sq, o, CenteringVariant::C, Some(&other), 48).unwrap();
            assert!(r < 1e-3, "{o:?} {r}");
        }
    }
}
