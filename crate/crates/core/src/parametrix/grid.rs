//! Space-time grid holding `u` and its stencil derivatives (`d = 1`).

use std::io::Write;

use serde::Serialize;

use super::fields::{FieldSample, SolutionFields};
use crate::coefficients::HolderExponents;
use crate::kernel::DerivativeFields;
use crate::{Error, Result};

/// Uniform nodes on `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisSpec {
    pub low: f64,
    pub high: f64,
    pub nodes: usize,
}

impl AxisSpec {
    pub fn step(&self) -> f64 {
        (self.high - self.low) / (self.nodes - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.nodes).map(|i| self.low + h * i as f64).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.nodes < 4 || !(self.high > self.low) {
            return Err(Error::InvalidArgument(format!(
                "axis [{}, {}] needs high > low and at least 4 nodes, got {}",
                self.low, self.high, self.nodes
            )));
        }
        Ok(())
    }
}

/// Horizon, space box and number of uniform time steps on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub x1: AxisSpec,
    pub x2: AxisSpec,
    pub time_steps: usize,
}

impl GridSpec {
    /// Square box `[-half_width, half_width]²` with `nodes` per axis and
    /// `ceil(steps_per_unit_time · T)` time steps.
    pub fn square(horizon: f64, half_width: f64, nodes: usize, steps_per_unit_time: usize) -> Self {
        let axis = AxisSpec { low: -half_width, high: half_width, nodes };
        let time_steps = ((horizon * steps_per_unit_time as f64).ceil() as usize).max(1);
        Self { horizon, x1: axis, x2: axis, time_steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon {} must be positive", self.horizon)));
        }
        if self.time_steps == 0 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        self.x1.validate()?;
        self.x2.validate()
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.time_steps;
        (0..=n)
            .map(|k| if k == n { self.horizon } else { self.horizon * k as f64 / n as f64 })
            .collect()
    }

    pub fn space_nodes(&self) -> usize {
        self.x1.nodes * self.x2.nodes
    }
}

/// `u` and its derivative fields on the grid, indexed `[k][i][j]` with `k`
/// the time node, `i` the `x1` node and `j` the `x2` node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub spec: GridSpec,
    pub times: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub u: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d11: Vec<f64>,
    pub d12: Vec<f64>,
    pub holder: HolderExponents,
}

/// Second order first derivative along a strided line.
fn first_diff(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
}

fn second_diff(f: &[f64], h: f64, out: &mut [f64]) {
    let n = f.len();
    let h2 = h * h;
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
    out[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / h2;
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
    }
}

/// Locates `v` on a uniform axis, clamping outside: cell index and weight of
/// the right node.
fn locate(v: f64, low: f64, h: f64, n: usize) -> (usize, f64) {
    let r = ((v - low) / h).clamp(0.0, (n - 1) as f64);
    let i = (r.floor() as usize).min(n - 2);
    (i, r - i as f64)
}

impl GridSolution {
    /// Builds the derivative fields of `u` (given on every node).
    pub fn from_values(spec: GridSpec, holder: HolderExponents, u: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let (n1, n2) = (spec.x1.nodes, spec.x2.nodes);
        let nt = spec.time_steps + 1;
        if u.len() != nt * n1 * n2 {
            return Err(Error::DimensionMismatch { expected: nt * n1 * n2, got: u.len() });
        }
        let (h1, h2) = (spec.x1.step(), spec.x2.step());
        let mut d1 = vec![0.0; u.len()];
        let mut d2 = vec![0.0; u.len()];
        let mut d11 = vec![0.0; u.len()];
        let mut d12 = vec![0.0; u.len()];
        let mut line1 = vec![0.0; n1];
        let mut out1 = vec![0.0; n1];
        for k in 0..nt {
            let base = k * n1 * n2;
            for i in 0..n1 {
                let row = base + i * n2;
                first_diff(&u[row..row + n2], h2, &mut d2[row..row + n2]);
            }
            for j in 0..n2 {
                for i in 0..n1 {
                    line1[i] = u[base + i * n2 + j];
                }
                first_diff(&line1, h1, &mut out1);
                for i in 0..n1 {
                    d1[base + i * n2 + j] = out1[i];
                }
                second_diff(&line1, h1, &mut out1);
                for i in 0..n1 {
                    d11[base + i * n2 + j] = out1[i];
                }
            }
            for i in 0..n1 {
                let row = base + i * n2;
                first_diff(&d1[row..row + n2], h2, &mut d12[row..row + n2]);
            }
        }
        Ok(Self {
            times: spec.times(),
            x1: spec.x1.points(),
            x2: spec.x2.points(),
            spec,
            u,
            d1,
            d2,
            d11,
            d12,
            holder,
        })
    }

    /// Samples `f(t, x)` on every node.
    pub fn from_function(spec: GridSpec, holder: HolderExponents, f: impl Fn(f64, &[f64]) -> f64) -> Result<Self> {
        spec.validate()?;
        let mut u = Vec::with_capacity((spec.time_steps + 1) * spec.space_nodes());
        for t in spec.times() {
            for a in spec.x1.points() {
                for b in spec.x2.points() {
                    u.push(f(t, &[a, b]));
                }
            }
        }
        Self::from_values(spec, holder, u)
    }

    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.x1.len() + i) * self.x2.len() + j
    }

    /// Values on the time slice `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.spec.space_nodes();
        &self.u[k * n..(k + 1) * n]
    }

    /// Trilinear interpolation of every field; constant continuation outside
    /// the box and the time range.
    pub fn interpolate(&self, s: f64, y: &[f64], out: &mut FieldSample) {
        let nt = self.times.len();
        let dt = self.spec.horizon / self.spec.time_steps as f64;
        let (k, wt) = locate(s, 0.0, dt, nt);
        let (i, wi) = locate(y[0], self.spec.x1.low, self.spec.x1.step(), self.x1.len());
        let (j, wj) = locate(y[1], self.spec.x2.low, self.spec.x2.step(), self.x2.len());
        let mut acc = [0.0; 4];
        for (dk, ck) in [(0, 1.0 - wt), (1, wt)] {
            if ck == 0.0 {
                continue;
            }
            for (di, ci) in [(0, 1.0 - wi), (1, wi)] {
                if ci == 0.0 {
                    continue;
                }
                for (dj, cj) in [(0, 1.0 - wj), (1, wj)] {
                    if cj == 0.0 {
                        continue;
                    }
                    let c = ck * ci * cj;
                    let p = self.index(k + dk, i + di, j + dj);
                    acc[0] += c * self.u[p];
                    acc[1] += c * self.d1[p];
                    acc[2] += c * self.d2[p];
                    acc[3] += c * self.d11[p];
                }
            }
        }
        out.u = acc[0];
        out.d1[0] = acc[1];
        out.d2[0] = acc[2];
        out.d11[0] = acc[3];
        out.available = [true; 3];
    }

    /// One CSV row per node: `t,x1,x2,u,D1u,D2u,D1sqU,D1D2u`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,x1,x2,u,D1u,D2u,D1sqU,D1D2u")?;
        for (k, t) in self.times.iter().enumerate() {
            for (i, a) in self.x1.iter().enumerate() {
                for (j, b) in self.x2.iter().enumerate() {
                    let p = self.index(k, i, j);
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                        t, a, b, self.u[p], self.d1[p], self.d2[p], self.d11[p], self.d12[p]
                    )?;
                }
            }
        }
        Ok(())
    }
}

impl SolutionFields for GridSolution {
    fn dim(&self) -> usize {
        1
    }

    fn sample_into(&self, s: f64, y: &[f64], out: &mut FieldSample) {
        self.interpolate(s, y, out);
    }
}

impl DerivativeFields for GridSolution {
    fn grad_x1(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = FieldSample::new(1);
        self.interpolate(t, x, &mut s);
        Ok(s.d1)
    }
    fn grad_x2(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = FieldSample::new(1);
        self.interpolate(t, x, &mut s);
        Ok(s.d2)
    }
    fn hess_x1(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut s = FieldSample::new(1);
        self.interpolate(t, x, &mut s);
        Ok(s.d11)
    }
}
