//! Deterministic transport, resolvent and the moments of the frozen
//! linearized system.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::gaussian::{cholesky_with_jitter, CholeskyFactor, SymMatrix};
use crate::quadrature::{cumulative_simpson, simpson_panels, simpson_weights};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OdeGridConfig {
    pub steps_per_unit_time: usize,
}

impl Default for OdeGridConfig {
    fn default() -> Self {
        Self { steps_per_unit_time: 64 }
    }
}

/// Mean shift, resolvent and covariance of the frozen system on `[t, s]`.
///
/// The mean is affine in the starting point:
/// `m(x) = (x1 + shift1, x2 + shift2 + R_{t,s} x1)`.
#[derive(Debug, Clone)]
pub struct FrozenMoments {
    pub t: f64,
    pub s: f64,
    pub shift1: Vec<f64>,
    pub shift2: Vec<f64>,
    pub resolvent: Vec<f64>,
    pub covariance: SymMatrix,
    pub chol: CholeskyFactor,
}

impl FrozenMoments {
    pub fn dim(&self) -> usize {
        self.shift1.len()
    }

    pub fn mean_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = x[i] + self.shift1[i];
            let mut v = x[d + i] + self.shift2[i];
            for j in 0..d {
                v += self.resolvent[i * d + j] * x[j];
            }
            out[d + i] = v;
        }
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.mean_into(x, &mut out);
        out
    }
}

/// Coefficients frozen at `(t, θ_t)`.
#[derive(Debug, Clone)]
pub struct FrozenCoefficients {
    pub theta: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub a: Vec<f64>,
    pub d1f2: Vec<f64>,
}

/// Transport `θ_{τ,·}(ξ)` on a uniform grid plus memoized frozen moments.
pub struct FrozenFrame {
    coeffs: CoefficientSet,
    tau: f64,
    xi: Vec<f64>,
    horizon: f64,
    cfg: OdeGridConfig,
    grid: Vec<f64>,
    theta: Vec<f64>,
    velocity: Vec<f64>,
    cache: RwLock<HashMap<(u64, u64), Arc<FrozenMoments>>>,
}

impl std::fmt::Debug for FrozenFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrozenFrame")
            .field("coeffs", &self.coeffs.name)
            .field("tau", &self.tau)
            .field("xi", &self.xi)
            .field("horizon", &self.horizon)
            .field("nodes", &self.grid.len())
            .finish()
    }
}

fn rk4_step(coeffs: &CoefficientSet, t: f64, h: f64, y: &[f64]) -> Vec<f64> {
    let k1 = coeffs.drift(t, y);
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = coeffs.drift(t + 0.5 * h, &y2);
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = coeffs.drift(t + 0.5 * h, &y3);
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = coeffs.drift(t + h, &y4);
    (0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Integrates `dθ/ds = F(s, θ)` from `θ(τ) = ξ` up to the horizon.
pub fn solve_transport(
    coeffs: &CoefficientSet,
    tau: f64,
    xi: &[f64],
    horizon: f64,
    cfg: OdeGridConfig,
) -> Result<FrozenFrame> {
    FrozenFrame::new(coeffs, tau, xi, horizon, cfg)
}

impl FrozenFrame {
    pub fn new(coeffs: &CoefficientSet, tau: f64, xi: &[f64], horizon: f64, cfg: OdeGridConfig) -> Result<Self> {
        if tau > horizon {
            return Err(Error::ReversedInterval { start: tau, end: horizon });
        }
        let n = 2 * coeffs.dim;
        if xi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: xi.len() });
        }
        if cfg.steps_per_unit_time == 0 {
            return Err(Error::InvalidArgument("steps_per_unit_time must be positive".into()));
        }
        let len = horizon - tau;
        let steps = ((len * cfg.steps_per_unit_time as f64).ceil() as usize).max(1);
        let h = len / steps as f64;
        let grid: Vec<f64> = (0..=steps)
            .map(|k| if k == steps { horizon } else { tau + h * k as f64 })
            .collect();
        let mut theta = Vec::with_capacity((steps + 1) * n);
        let mut velocity = Vec::with_capacity((steps + 1) * n);
        let mut y = xi.to_vec();
        for k in 0..=steps {
            theta.extend_from_slice(&y);
            velocity.extend(coeffs.drift(grid[k], &y));
            if k < steps && h > 0.0 {
                y = rk4_step(coeffs, grid[k], h, &y);
            }
        }
        Ok(Self {
            coeffs: coeffs.clone(),
            tau,
            xi: xi.to_vec(),
            horizon,
            cfg,
            grid,
            theta,
            velocity,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn config(&self) -> OdeGridConfig {
        self.cfg
    }

    /// `θ` at grid node `k`.
    pub fn theta_node(&self, k: usize) -> &[f64] {
        let n = 2 * self.dim();
        &self.theta[k * n..(k + 1) * n]
    }

    fn check_time(&self, s: f64) -> Result<f64> {
        let tol = 1e-12 * self.horizon.abs().max(1.0);
        if s < self.tau - tol || s > self.horizon + tol {
            return Err(Error::OutOfGrid { time: s, start: self.tau, end: self.horizon });
        }
        Ok(s.clamp(self.tau, self.horizon))
    }

    /// `θ_{τ,s}(ξ)` by cubic Hermite interpolation between nodes.
    pub fn theta(&self, s: f64) -> Result<Vec<f64>> {
        let s = self.check_time(s)?;
        let mut out = vec![0.0; 2 * self.dim()];
        self.theta_into(s, &mut out);
        Ok(out)
    }

    fn theta_into(&self, s: f64, out: &mut [f64]) {
        let n = 2 * self.dim();
        let steps = self.grid.len() - 1;
        if steps == 0 || self.horizon == self.tau {
            out.copy_from_slice(&self.theta[..n]);
            return;
        }
        let h = (self.horizon - self.tau) / steps as f64;
        let k = (((s - self.tau) / h).floor() as usize).min(steps - 1);
        let (t0, t1) = (self.grid[k], self.grid[k + 1]);
        let hk = t1 - t0;
        let u = ((s - t0) / hk).clamp(0.0, 1.0);
        if u == 0.0 {
            out.copy_from_slice(&self.theta[k * n..(k + 1) * n]);
            return;
        }
        if u == 1.0 {
            out.copy_from_slice(&self.theta[(k + 1) * n..(k + 2) * n]);
            return;
        }
        let h00 = 2.0 * u * u * u - 3.0 * u * u + 1.0;
        let h10 = u * u * u - 2.0 * u * u + u;
        let h01 = -2.0 * u * u * u + 3.0 * u * u;
        let h11 = u * u * u - u * u;
        for i in 0..n {
            out[i] = h00 * self.theta[k * n + i]
                + h10 * hk * self.velocity[k * n + i]
                + h01 * self.theta[(k + 1) * n + i]
                + h11 * hk * self.velocity[(k + 1) * n + i];
        }
    }

    /// Coefficients evaluated along the transport at time `s`.
    pub fn frozen_coefficients(&self, s: f64) -> Result<FrozenCoefficients> {
        let s = self.check_time(s)?;
        let d = self.dim();
        let mut theta = vec![0.0; 2 * d];
        self.theta_into(s, &mut theta);
        let (x1, x2) = theta.split_at(d);
        let mut f1 = vec![0.0; d];
        let mut f2 = vec![0.0; d];
        let mut sig = vec![0.0; d * d];
        let mut a = vec![0.0; d * d];
        let mut d1f2 = vec![0.0; d * d];
        self.coeffs.eval_f1(s, x1, x2, &mut f1);
        self.coeffs.eval_f2(s, x1, x2, &mut f2);
        self.coeffs.eval_a(s, x1, x2, &mut sig, &mut a);
        self.coeffs.eval_d1f2(s, x1, x2, &mut d1f2);
        Ok(FrozenCoefficients { theta, f1, f2, a, d1f2 })
    }

    /// Moments of the frozen system started at time `t`, observed at `s`.
    pub fn moments(&self, t: f64, s: f64) -> Result<Arc<FrozenMoments>> {
        if t > s {
            return Err(Error::ReversedInterval { start: t, end: s });
        }
        let t = self.check_time(t)?;
        let s = self.check_time(s)?;
        let key = (t.to_bits(), s.to_bits());
        if let Some(m) = self.cache.read().expect("moment cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(self.assemble(t, s)?);
        // Concurrent first writers compute identical values; keep whichever lands first.
        let mut cache = self.cache.write().expect("moment cache poisoned");
        Ok(cache.entry(key).or_insert(m).clone())
    }

    fn assemble(&self, t: f64, s: f64) -> Result<FrozenMoments> {
        let d = self.dim();
        if s == t {
            return Ok(FrozenMoments {
                t,
                s,
                shift1: vec![0.0; d],
                shift2: vec![0.0; d],
                resolvent: vec![0.0; d * d],
                covariance: SymMatrix::zeros(2 * d),
                chol: CholeskyFactor::point_mass(2 * d),
            });
        }
        let panels = simpson_panels(s - t, self.cfg.steps_per_unit_time, 16);
        let h = (s - t) / panels as f64;
        let nodes = panels + 1;
        let dd = d * d;

        let mut f1 = vec![0.0; nodes * d];
        let mut f2 = vec![0.0; nodes * d];
        let mut th1 = vec![0.0; nodes * d];
        let mut a = vec![0.0; nodes * dd];
        let mut g = vec![0.0; nodes * dd];
        let mut theta = vec![0.0; 2 * d];
        let mut sig = vec![0.0; dd];
        for k in 0..nodes {
            let r = if k == panels { s } else { t + h * k as f64 };
            self.theta_into(r, &mut theta);
            let (x1, x2) = theta.split_at(d);
            th1[k * d..(k + 1) * d].copy_from_slice(x1);
            self.coeffs.eval_f1(r, x1, x2, &mut f1[k * d..(k + 1) * d]);
            self.coeffs.eval_f2(r, x1, x2, &mut f2[k * d..(k + 1) * d]);
            self.coeffs.eval_a(r, x1, x2, &mut sig, &mut a[k * dd..(k + 1) * dd]);
            self.coeffs.eval_d1f2(r, x1, x2, &mut g[k * dd..(k + 1) * dd]);
        }
        let w = simpson_weights(panels, h);
        let cum_f1 = cumulative_simpson(&f1, d, h);
        let cum_g = cumulative_simpson(&g, dd, h);

        let mut shift1 = vec![0.0; d];
        let mut shift2 = vec![0.0; d];
        let resolvent: Vec<f64> = cum_g[(nodes - 1) * dd..].to_vec();
        let mut c11 = vec![0.0; dd];
        let mut c12 = vec![0.0; dd];
        let mut c22 = vec![0.0; dd];
        let mut rs = vec![0.0; dd];
        let mut ar = vec![0.0; dd];
        for k in 0..nodes {
            let wk = w[k];
            let gk = &g[k * dd..(k + 1) * dd];
            for i in 0..d {
                shift1[i] += wk * f1[k * d + i];
                // F2 + D1F2 (∫F1 - θ¹)
                let mut v = f2[k * d + i];
                for j in 0..d {
                    v += gk[i * d + j] * (cum_f1[k * d + j] - th1[k * d + j]);
                }
                shift2[i] += wk * v;
            }
            // R_{r,s} = R_{t,s} - R_{t,r}
            for e in 0..dd {
                rs[e] = resolvent[e] - cum_g[k * dd + e];
            }
            let ak = &a[k * dd..(k + 1) * dd];
            // a R_{r,s}ᵀ
            for i in 0..d {
                for j in 0..d {
                    ar[i * d + j] = (0..d).map(|l| ak[i * d + l] * rs[j * d + l]).sum();
                }
            }
            for i in 0..d {
                for j in 0..d {
                    c11[i * d + j] += wk * ak[i * d + j];
                    c12[i * d + j] += wk * ar[i * d + j];
                    let v: f64 = (0..d).map(|l| rs[i * d + l] * ar[l * d + j]).sum();
                    c22[i * d + j] += wk * v;
                }
            }
        }
        let n = 2 * d;
        let covariance = SymMatrix::from_upper(n, |i, j| match (i < d, j < d) {
            (true, true) => 0.5 * (c11[i * d + j] + c11[j * d + i]),
            (true, false) => c12[i * d + (j - d)],
            (false, false) => 0.5 * (c22[(i - d) * d + (j - d)] + c22[(j - d) * d + (i - d)]),
            (false, true) => unreachable!(),
        });
        let chol = if covariance.max_abs() == 0.0 {
            // no noise at all: the frozen law is a point mass
            CholeskyFactor::point_mass(n)
        } else {
            let max_jitter = 1e-8 * covariance.max_diag();
            cholesky_with_jitter(&covariance, max_jitter).map_err(|_| Error::DegenerateCovariance { t, s })?
        };
        Ok(FrozenMoments { t, s, shift1, shift2, resolvent, covariance, chol })
    }

    /// `R_{t,r} = ∫_t^r D1F2(v, θ_v) dv`.
    pub fn resolvent(&self, t: f64, r: f64) -> Result<Vec<f64>> {
        Ok(self.moments(t, r)?.resolvent.clone())
    }

    /// Mean of the frozen system started at `(t, x)`, observed at `s`.
    pub fn mean(&self, t: f64, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let n = 2 * self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        Ok(self.moments(t, s)?.mean(x))
    }

    pub fn covariance(&self, t: f64, s: f64) -> Result<SymMatrix> {
        Ok(self.moments(t, s)?.covariance.clone())
    }
}

pub fn resolvent(frame: &FrozenFrame, t: f64, r: f64) -> Result<Vec<f64>> {
    frame.resolvent(t, r)
}

pub fn mean(frame: &FrozenFrame, t: f64, s: f64, x: &[f64]) -> Result<Vec<f64>> {
    frame.mean(t, s, x)
}

pub fn covariance(frame: &FrozenFrame, t: f64, s: f64) -> Result<SymMatrix> {
    frame.covariance(t, s)
}

/// Closed-form covariance of the one-dimensional Kolmogorov process.
pub fn kolmogorov_covariance(alpha: f64, s: f64) -> SymMatrix {
    let off = alpha * s * s / 2.0;
    SymMatrix::new(2, vec![s, off, off, alpha * alpha * s * s * s / 3.0]).expect("symmetric by construction")
}
