//! The frozen Gaussian transition density, its derivatives and bounds, the
//! Kolmogorov closed form, and the true and frozen generators.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::gaussian::cholesky_with_jitter;
use crate::transport::{kolmogorov_covariance, FrozenFrame, FrozenMoments};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Numbers of derivatives taken in `x1`, `x2` and `y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DerivOrder {
    pub n_x1: u8,
    pub n_x2: u8,
    pub n_y1: u8,
}

impl DerivOrder {
    pub const VALUE: DerivOrder = DerivOrder { n_x1: 0, n_x2: 0, n_y1: 0 };

    pub fn new(n_x1: u8, n_x2: u8, n_y1: u8) -> Result<Self> {
        let o = Self { n_x1, n_x2, n_y1 };
        if o.is_admissible() {
            Ok(o)
        } else {
            Err(Error::UnsupportedOrder { n_x1, n_x2, n_y1 })
        }
    }

    pub fn is_admissible(&self) -> bool {
        self.n_x1 <= 2 && self.n_x2 <= 1 && self.n_y1 <= 1 && self.total() <= 3
    }

    pub fn total(&self) -> u8 {
        self.n_x1 + self.n_x2 + self.n_y1
    }

    /// Every admissible order, value first.
    pub fn admissible() -> Vec<DerivOrder> {
        let mut out = Vec::new();
        for n_x1 in 0..=2 {
            for n_x2 in 0..=1 {
                for n_y1 in 0..=1 {
                    let o = DerivOrder { n_x1, n_x2, n_y1 };
                    if o.is_admissible() {
                        out.push(o);
                    }
                }
            }
        }
        out
    }

    /// Power of `s - t` governing `sup_y |derivative|` in dimension `d`.
    pub fn scaling_exponent(&self, d: usize) -> f64 {
        -2.0 * d as f64 - (3.0 * self.n_x2 as f64 + self.n_x1 as f64 + self.n_y1 as f64) / 2.0
    }

    pub fn label(&self) -> String {
        if self.total() == 0 {
            return "value".into();
        }
        let mut parts = Vec::new();
        for (n, name) in [(self.n_x1, "x1"), (self.n_x2, "x2"), (self.n_y1, "y1")] {
            match n {
                0 => {}
                1 => parts.push(format!("D{name}")),
                k => parts.push(format!("D{name}^{k}")),
            }
        }
        parts.join(" ")
    }
}

/// Dense tensor with `d` entries per derivative slot, slots ordered
/// `x1…, x2…, y1…`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(&self) -> f64 {
        self.data[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelEval {
    pub value: f64,
    pub derivatives: BTreeMap<DerivOrder, Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivMode {
    Analytic,
    FiniteDifference,
}

/// Density of `N(m(x), Σ)` at `y` for precomputed moments.
pub fn density_from_moments(m: &FrozenMoments, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut r = m.mean(x);
    for i in 0..n {
        r[i] = y[i] - r[i];
    }
    let q = m.chol.quad_form(&r);
    (-0.5 * (q + m.chol.log_det()) - 0.5 * n as f64 * TWO_PI.ln()).exp()
}

/// Frozen transition density `q̃(t, x; s, y)`.
pub fn qtilde_density(frame: &FrozenFrame, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<f64> {
    check_strict(t, s)?;
    check_state(frame, x)?;
    check_state(frame, y)?;
    let m = frame.moments(t, s)?;
    Ok(density_from_moments(&m, x, y))
}

fn check_strict(t: f64, s: f64) -> Result<()> {
    if t >= s {
        return Err(Error::ReversedInterval { start: t, end: s });
    }
    Ok(())
}

fn check_state(frame: &FrozenFrame, x: &[f64]) -> Result<()> {
    let n = 2 * frame.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    Ok(())
}

/// Direction in which `r = y - m(x)` moves for each derivative slot.
#[derive(Debug, Clone, Copy)]
enum Slot {
    X1(usize),
    X2(usize),
    Y1(usize),
    Y2(usize),
}

fn slot_direction(slot: Slot, d: usize, resolvent: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; 2 * d];
    match slot {
        Slot::X1(i) => {
            v[i] = -1.0;
            for k in 0..d {
                v[d + k] = -resolvent[k * d + i];
            }
        }
        Slot::X2(j) => v[d + j] = -1.0,
        Slot::Y1(l) => v[l] = 1.0,
        Slot::Y2(l) => v[d + l] = 1.0,
    }
    v
}

/// `q · Σ_{partial pairings} Π c_ij Π a_i` for up to three directions, with
/// `a_i = -v_iᵀ P r` and `c_ij = -v_iᵀ P v_j`.
fn gaussian_directional(q: f64, pr: &[f64], pv: &[Vec<f64>], dirs: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a: Vec<f64> = dirs.iter().map(|v| -dot(v, pr)).collect();
    let c = |i: usize, j: usize| -dot(&dirs[i], &pv[j]);
    let poly = match dirs.len() {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[1] + c(0, 1),
        3 => a[0] * a[1] * a[2] + c(0, 1) * a[2] + c(0, 2) * a[1] + c(1, 2) * a[0],
        _ => unreachable!("orders above three are rejected earlier"),
    };
    q * poly
}

fn slots_for(order: DerivOrder, d: usize) -> Vec<Vec<Slot>> {
    let mut lists: Vec<Vec<Slot>> = vec![Vec::new()];
    let extend = |lists: &mut Vec<Vec<Slot>>, n: u8, mk: fn(usize) -> Slot| {
        for _ in 0..n {
            let mut next = Vec::with_capacity(lists.len() * d);
            for l in lists.iter() {
                for i in 0..d {
                    let mut l2 = l.clone();
                    l2.push(mk(i));
                    next.push(l2);
                }
            }
            *lists = next;
        }
    };
    extend(&mut lists, order.n_x1, Slot::X1);
    extend(&mut lists, order.n_x2, Slot::X2);
    extend(&mut lists, order.n_y1, Slot::Y1);
    lists
}

fn shape_for(order: DerivOrder, d: usize) -> Vec<usize> {
    vec![d; order.total() as usize]
}

fn analytic_slots(m: &FrozenMoments, x: &[f64], y: &[f64], lists: &[Vec<Slot>]) -> Vec<f64> {
    let d = m.dim();
    let n = 2 * d;
    let mut r = m.mean(x);
    for i in 0..n {
        r[i] = y[i] - r[i];
    }
    let q = density_from_moments(m, x, y);
    let pr = m.chol.solve(&r);
    lists
        .iter()
        .map(|slots| {
            let dirs: Vec<Vec<f64>> = slots.iter().map(|s| slot_direction(*s, d, &m.resolvent)).collect();
            let pv: Vec<Vec<f64>> = dirs.iter().map(|v| m.chol.solve(v)).collect();
            gaussian_directional(q, &pr, &pv, &dirs)
        })
        .collect()
}

/// Nested central differences, one stencil per slot. Every level uses the
/// step chosen from the total order.
fn fd_slots(m: &FrozenMoments, x: &[f64], y: &[f64], slots: &[Slot], base: f64) -> f64 {
    if slots.is_empty() {
        return density_from_moments(m, x, y);
    }
    let d = m.dim();
    let (first, rest) = (slots[0], &slots[1..]);
    let (mut xp, mut yp) = (x.to_vec(), y.to_vec());
    let (mut xm, mut ym) = (x.to_vec(), y.to_vec());
    let h = match first {
        Slot::X1(i) => {
            let h = base * x[i].abs().max(1.0);
            xp[i] += h;
            xm[i] -= h;
            h
        }
        Slot::X2(j) => {
            let h = base * x[d + j].abs().max(1.0);
            xp[d + j] += h;
            xm[d + j] -= h;
            h
        }
        Slot::Y1(l) => {
            let h = base * y[l].abs().max(1.0);
            yp[l] += h;
            ym[l] -= h;
            h
        }
        Slot::Y2(l) => {
            let h = base * y[d + l].abs().max(1.0);
            yp[d + l] += h;
            ym[d + l] -= h;
            h
        }
    };
    (fd_slots(m, &xp, &yp, rest, base) - fd_slots(m, &xm, &ym, rest, base)) / (2.0 * h)
}

/// Derivative of `q̃` of the requested order.
pub fn qtilde_derivative(
    frame: &FrozenFrame,
    t: f64,
    x: &[f64],
    s: f64,
    y: &[f64],
    order: DerivOrder,
    mode: DerivMode,
) -> Result<Tensor> {
    if !order.is_admissible() {
        return Err(Error::UnsupportedOrder { n_x1: order.n_x1, n_x2: order.n_x2, n_y1: order.n_y1 });
    }
    check_strict(t, s)?;
    check_state(frame, x)?;
    check_state(frame, y)?;
    let m = frame.moments(t, s)?;
    Ok(derivative_from_moments(&m, x, y, order, mode))
}

pub fn derivative_from_moments(m: &FrozenMoments, x: &[f64], y: &[f64], order: DerivOrder, mode: DerivMode) -> Tensor {
    let d = m.dim();
    let lists = slots_for(order, d);
    let data = match mode {
        DerivMode::Analytic => analytic_slots(m, x, y, &lists),
        DerivMode::FiniteDifference => {
            let base = [1e-5, 1e-5, 1e-4, 4e-4][order.total() as usize];
            lists.iter().map(|l| fd_slots(m, x, y, l, base)).collect()
        }
    };
    Tensor { shape: shape_for(order, d), data }
}

/// Value and every requested derivative at one point.
pub fn qtilde_eval(
    frame: &FrozenFrame,
    t: f64,
    x: &[f64],
    s: f64,
    y: &[f64],
    orders: &[DerivOrder],
) -> Result<KernelEval> {
    check_strict(t, s)?;
    let m = frame.moments(t, s)?;
    let mut derivatives = BTreeMap::new();
    for o in orders {
        if !o.is_admissible() {
            return Err(Error::UnsupportedOrder { n_x1: o.n_x1, n_x2: o.n_x2, n_y1: o.n_y1 });
        }
        derivatives.insert(*o, derivative_from_moments(&m, x, y, *o, DerivMode::Analytic));
    }
    Ok(KernelEval { value: density_from_moments(&m, x, y), derivatives })
}

/// `(D_{y1} q̃, D_{y2} q̃)`.
pub fn qtilde_grad_y(frame: &FrozenFrame, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<Vec<f64>> {
    check_strict(t, s)?;
    let m = frame.moments(t, s)?;
    let d = m.dim();
    let lists: Vec<Vec<Slot>> = (0..d).map(|l| vec![Slot::Y1(l)]).chain((0..d).map(|l| vec![Slot::Y2(l)])).collect();
    Ok(analytic_slots(&m, x, y, &lists))
}

/// `D_{x2} q̃` as a `d`-vector.
pub fn qtilde_grad_x2(frame: &FrozenFrame, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<Vec<f64>> {
    Ok(qtilde_derivative(frame, t, x, s, y, DerivOrder { n_x1: 0, n_x2: 1, n_y1: 0 }, DerivMode::Analytic)?.data)
}

/// Gaussian majorant `c/(s-t)^{2d} exp(-c(|y1-m¹|²/(s-t) + |y2-m²|²/(s-t)³))`.
pub fn qhat_bound(frame: &FrozenFrame, t: f64, x: &[f64], s: f64, y: &[f64], c: f64) -> Result<f64> {
    check_strict(t, s)?;
    let m = frame.mean(t, s, x)?;
    Ok(qhat_from_mean(&m, y, s - t, c))
}

pub fn qhat_from_mean(mean: &[f64], y: &[f64], dt: f64, c: f64) -> f64 {
    let d = mean.len() / 2;
    let e1: f64 = (0..d).map(|i| (y[i] - mean[i]).powi(2)).sum();
    let e2: f64 = (d..2 * d).map(|i| (y[i] - mean[i]).powi(2)).sum();
    c / dt.powi(2 * d as i32) * (-c * (e1 / dt + e2 / (dt * dt * dt))).exp()
}

/// Result of [`domination_search`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domination {
    pub c: f64,
    pub big_c: f64,
}

/// Sweeps `c` upward over `c0·2^k` and keeps the largest value for which
/// `q̃ ≤ C·q̂_c` holds with `C ≤ c_limit` on a random sample around the mean.
pub fn domination_search(
    frame: &FrozenFrame,
    t: f64,
    x: &[f64],
    s_values: &[f64],
    samples: usize,
    seed: u64,
    c_limit: f64,
) -> Result<Option<Domination>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut pts = Vec::with_capacity(samples);
    for k in 0..samples {
        let s = s_values[k % s_values.len()];
        let m = frame.moments(t, s)?;
        let mean = m.mean(x);
        // spread wider than the kernel so the tails are probed
        let z: Vec<f64> = (0..n).map(|_| 2.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect();
        let mut lz = vec![0.0; n];
        m.chol.mul_lower(&z, &mut lz);
        let y: Vec<f64> = mean.iter().zip(&lz).map(|(a, b)| a + b).collect();
        pts.push((s, mean.clone(), y.clone(), density_from_moments(&m, x, &y)));
    }
    let mut best = None;
    let mut c = 1e-3;
    while c < 1e3 {
        let mut big_c: f64 = 0.0;
        for (s, mean, y, q) in &pts {
            let bound = qhat_from_mean(mean, y, s - t, c);
            big_c = big_c.max(if bound > 0.0 { q / bound } else { f64::INFINITY });
        }
        if big_c.is_finite() && big_c <= c_limit {
            best = Some(Domination { c, big_c });
        } else if best.is_some() {
            break;
        }
        c *= 2.0;
    }
    Ok(best)
}

/// Closed-form Kolmogorov density for `d = 1`.
pub fn kolmogorov_density(alpha: f64, s: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if alpha == 0.0 {
        return Err(Error::ZeroAlpha);
    }
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("time {s} must be positive")));
    }
    if x.len() != 2 || y.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len().max(y.len()) });
    }
    let k = kolmogorov_covariance(alpha, s);
    let chol = cholesky_with_jitter(&k, 0.0)?;
    let r = [y[0] - x[0], y[1] - x[1] - s * alpha * x[0]];
    let q = chol.quad_form(&r);
    Ok(3f64.sqrt() / (alpha.abs() * std::f64::consts::PI * s * s) * (-0.5 * q).exp())
}

/// Spatial derivatives of a test function, as far as they are known.
pub trait DerivativeFields {
    fn grad_x1(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::MissingDerivativeField("D1"))
    }
    fn grad_x2(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::MissingDerivativeField("D2"))
    }
    /// `D²_{x1}`, row-major `d×d`.
    fn hess_x1(&self, _t: f64, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::MissingDerivativeField("D1^2"))
    }
}

type FieldFn = Box<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Test function given by closures for its derivatives.
#[derive(Default)]
pub struct AnalyticFields {
    pub d1: Option<FieldFn>,
    pub d2: Option<FieldFn>,
    pub d11: Option<FieldFn>,
}

impl AnalyticFields {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_d1(mut self, f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.d1 = Some(Box::new(f));
        self
    }

    pub fn with_d2(mut self, f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.d2 = Some(Box::new(f));
        self
    }

    pub fn with_d11(mut self, f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.d11 = Some(Box::new(f));
        self
    }
}

impl DerivativeFields for AnalyticFields {
    fn grad_x1(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.d1.as_ref().map(|f| f(t, x)).ok_or(Error::MissingDerivativeField("D1"))
    }
    fn grad_x2(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.d2.as_ref().map(|f| f(t, x)).ok_or(Error::MissingDerivativeField("D2"))
    }
    fn hess_x1(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.d11.as_ref().map(|f| f(t, x)).ok_or(Error::MissingDerivativeField("D1^2"))
    }
}

/// `q̃(·, ·; s, y)` viewed as a function of the starting point.
pub struct KernelAsField<'a> {
    pub frame: &'a FrozenFrame,
    pub s: f64,
    pub y: Vec<f64>,
}

impl KernelAsField<'_> {
    fn order(&self, t: f64, x: &[f64], o: DerivOrder) -> Result<Vec<f64>> {
        Ok(qtilde_derivative(self.frame, t, x, self.s, &self.y, o, DerivMode::Analytic)?.data)
    }
}

impl DerivativeFields for KernelAsField<'_> {
    fn grad_x1(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.order(t, x, DerivOrder { n_x1: 1, n_x2: 0, n_y1: 0 })
    }
    fn grad_x2(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.order(t, x, DerivOrder { n_x1: 0, n_x2: 1, n_y1: 0 })
    }
    fn hess_x1(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.order(t, x, DerivOrder { n_x1: 2, n_x2: 0, n_y1: 0 })
    }
}

fn generator_terms(
    d: usize,
    a: &[f64],
    b1: &[f64],
    b2: &[f64],
    psi: &dyn DerivativeFields,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    if a.iter().any(|v| *v != 0.0) {
        let h = psi.hess_x1(t, x)?;
        for i in 0..d {
            for j in 0..d {
                total += 0.5 * a[i * d + j] * h[j * d + i];
            }
        }
    }
    if b1.iter().any(|v| *v != 0.0) {
        let g = psi.grad_x1(t, x)?;
        total += b1.iter().zip(&g).map(|(u, v)| u * v).sum::<f64>();
    }
    if b2.iter().any(|v| *v != 0.0) {
        let g = psi.grad_x2(t, x)?;
        total += b2.iter().zip(&g).map(|(u, v)| u * v).sum::<f64>();
    }
    Ok(total)
}

/// `½Tr(a D²_{x1}ψ) + F1·D_{x1}ψ + F2·D_{x2}ψ`.
///
/// Terms whose coefficient vanishes identically at `(t, x)` are skipped, so
/// `psi` only has to supply the derivatives that are actually used.
pub fn apply_generator(coeffs: &CoefficientSet, psi: &dyn DerivativeFields, t: f64, x: &[f64]) -> Result<f64> {
    let d = coeffs.dim;
    if x.len() != 2 * d {
        return Err(Error::DimensionMismatch { expected: 2 * d, got: x.len() });
    }
    let a = coeffs.a_matrix(t, x);
    let b = coeffs.drift(t, x);
    generator_terms(d, &a, &b[..d], &b[d..], psi, t, x)
}

/// Generator of the system frozen along the frame's transport.
pub fn apply_frozen_generator(frame: &FrozenFrame, psi: &dyn DerivativeFields, t: f64, x: &[f64]) -> Result<f64> {
    let d = frame.dim();
    check_state(frame, x)?;
    let fc = frame.frozen_coefficients(t)?;
    let mut b2 = fc.f2.clone();
    for i in 0..d {
        for j in 0..d {
            b2[i] += fc.d1f2[i * d + j] * (x[j] - fc.theta[j]);
        }
    }
    generator_terms(d, &fc.a, &fc.f1, &b2, psi, t, x)
}
