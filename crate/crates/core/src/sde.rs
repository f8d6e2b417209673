//! Euler–Maruyama for the degenerate system, exact sampling of the frozen
//! system, and shared-noise refinement experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::gaussian::{mvn_sample, SymMatrix};
use crate::stats::{compensated_sum, mean_and_stderr};
use crate::transport::FrozenFrame;

/// Increments are rounded to multiples of this quantum so that splitting and
/// pairwise summation are exact in floating point.
pub const NOISE_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

fn quantize(v: f64) -> f64 {
    (v / NOISE_QUANTUM).round() * NOISE_QUANTUM
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, stream)`; `level` separates refinement draws.
pub fn substream(seed: u64, level: u64, stream: u64) -> ChaCha8Rng {
    let key = if level == 0 { seed } else { splitmix64(seed ^ splitmix64(level)) };
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}

/// Brownian increments on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrownianPath {
    pub dim: usize,
    pub step: f64,
    /// `steps × dim`, row-major.
    pub increments: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub level: u64,
}

impl BrownianPath {
    pub fn generate(dim: usize, step: f64, steps: usize, seed: u64, stream: u64) -> Self {
        let mut rng = substream(seed, 0, stream);
        let sd = step.sqrt();
        let increments = (0..steps * dim)
            .map(|_| quantize(sd * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self { dim, step, increments, seed, stream, level: 0 }
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    /// Halves the step by splitting each increment `ΔW = a + b` with
    /// `a | ΔW ~ N(ΔW/2, h/4)`.
    pub fn refine(&self) -> Self {
        let level = self.level + 1;
        let mut rng = substream(self.seed, level, self.stream);
        let sd = (self.step / 4.0).sqrt();
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for k in 0..self.steps() {
            let dw = self.increment(k);
            let first: Vec<f64> = dw
                .iter()
                .map(|w| quantize(0.5 * w + sd * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            increments.extend_from_slice(&first);
            increments.extend(dw.iter().zip(&first).map(|(w, a)| w - a));
        }
        Self { dim: self.dim, step: self.step / 2.0, increments, seed: self.seed, stream: self.stream, level }
    }

    /// Pairwise sums: the inverse of [`BrownianPath::refine`].
    pub fn coarsen(&self) -> Result<Self> {
        let n = self.steps();
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("cannot coarsen {n} steps")));
        }
        let d = self.dim;
        let mut increments = Vec::with_capacity(self.increments.len() / 2);
        for k in 0..n / 2 {
            for i in 0..d {
                increments.push(self.increments[2 * k * d + i] + self.increments[(2 * k + 1) * d + i]);
            }
        }
        Ok(Self {
            dim: d,
            step: self.step * 2.0,
            increments,
            seed: self.seed,
            stream: self.stream,
            level: self.level.saturating_sub(1),
        })
    }
}

/// Simulated states on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step: f64,
    pub seed: u64,
    pub stream: u64,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

fn steps_for(t: f64, horizon: f64, h: f64) -> Result<usize> {
    if t > horizon {
        return Err(Error::ReversedInterval { start: t, end: horizon });
    }
    let raw = (horizon - t) / h;
    let n = raw.round();
    if (raw - n).abs() > 1e-9 * raw.max(1.0) {
        return Err(Error::InvalidArgument(format!("step {h} does not divide [{t}, {horizon}]")));
    }
    Ok(n as usize)
}

/// Scratch buffers for allocation-free Euler steps.
struct EulerWork {
    f1: Vec<f64>,
    f2: Vec<f64>,
    sig: Vec<f64>,
}

impl EulerWork {
    fn new(d: usize) -> Self {
        Self { f1: vec![0.0; d], f2: vec![0.0; d], sig: vec![0.0; d * d] }
    }

    fn step(&mut self, coeffs: &CoefficientSet, tk: f64, h: f64, x: &mut [f64], dw: &[f64]) {
        let d = coeffs.dim;
        let (x1, x2) = x.split_at(d);
        coeffs.eval_f1(tk, x1, x2, &mut self.f1);
        coeffs.eval_f2(tk, x1, x2, &mut self.f2);
        coeffs.eval_sigma(tk, x1, x2, &mut self.sig);
        for i in 0..d {
            let noise: f64 = (0..d).map(|j| self.sig[i * d + j] * dw[j]).sum();
            x[i] += self.f1[i] * h + noise;
        }
        // Only the first block is forced by the noise.
        for i in 0..d {
            x[d + i] += self.f2[i] * h;
        }
    }
}

/// Euler–Maruyama on `[t, horizon]` driven by `path`.
pub fn euler_simulate(
    coeffs: &CoefficientSet,
    x: &[f64],
    t: f64,
    horizon: f64,
    path: &BrownianPath,
) -> Result<Trajectory> {
    let d = coeffs.dim;
    if x.len() != 2 * d {
        return Err(Error::DimensionMismatch { expected: 2 * d, got: x.len() });
    }
    if path.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: path.dim });
    }
    let h = path.step;
    let n = steps_for(t, horizon, h)?;
    if path.steps() < n {
        return Err(Error::InvalidArgument(format!("path has {} steps, {n} needed", path.steps())));
    }
    let mut work = EulerWork::new(d);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut state = x.to_vec();
    times.push(t);
    states.push(state.clone());
    for k in 0..n {
        let tk = t + h * k as f64;
        work.step(coeffs, tk, h, &mut state, path.increment(k));
        times.push(if k + 1 == n { horizon } else { t + h * (k + 1) as f64 });
        states.push(state.clone());
    }
    Ok(Trajectory { times, states, step: h, seed: path.seed, stream: path.stream })
}

/// Terminal Euler state only, without storing the trajectory.
pub fn euler_terminal(coeffs: &CoefficientSet, x: &[f64], t: f64, horizon: f64, path: &BrownianPath) -> Result<Vec<f64>> {
    let h = path.step;
    let n = steps_for(t, horizon, h)?;
    if path.steps() < n {
        return Err(Error::InvalidArgument(format!("path has {} steps, {n} needed", path.steps())));
    }
    let mut work = EulerWork::new(coeffs.dim);
    let mut state = x.to_vec();
    for k in 0..n {
        work.step(coeffs, t + h * k as f64, h, &mut state, path.increment(k));
    }
    Ok(state)
}

/// One exact draw of the frozen system started at `(t, x)`, observed at `s`.
pub fn frozen_simulate<R: Rng + ?Sized>(frame: &FrozenFrame, x: &[f64], t: f64, s: f64, rng: &mut R) -> Result<Vec<f64>> {
    let m = frame.moments(t, s)?;
    let mean = m.mean(x);
    Ok(mvn_sample(&mean, &m.chol, rng, 1)?.pop().expect("one sample requested"))
}

/// Squared sup-distance between a trajectory and its refinement, read on the
/// coarse grid.
pub fn coarse_sup_distance_sq(coarse: &Trajectory, fine: &Trajectory) -> f64 {
    let ratio = ((fine.states.len() - 1) / (coarse.states.len() - 1)).max(1);
    coarse
        .states
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let f = &fine.states[k * ratio];
            c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub level: usize,
    pub h: f64,
    pub mean_sq_sup_dist: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// `E sup|X^{(h)} - X^{(h/2)}|²` for `h = h0, h0/2, …`, with both schemes
/// driven by the same Brownian path.
pub fn dual_refinement_experiment(
    coeffs: &CoefficientSet,
    x: &[f64],
    t: f64,
    horizon: f64,
    h0: f64,
    levels: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<RefinementRow>> {
    if levels < 1 {
        return Err(Error::InvalidArgument("at least one level is required".into()));
    }
    if n_paths == 0 {
        return Err(Error::InvalidArgument("at least one path is required".into()));
    }
    let steps0 = steps_for(t, horizon, h0)?;
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let mut path = BrownianPath::generate(coeffs.dim, h0, steps0, seed, p as u64);
            let mut coarse = euler_simulate(coeffs, x, t, horizon, &path)?;
            let mut out = Vec::with_capacity(levels);
            for _ in 0..levels {
                path = path.refine();
                let fine = euler_simulate(coeffs, x, t, horizon, &path)?;
                out.push(coarse_sup_distance_sq(&coarse, &fine));
                coarse = fine;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok((0..levels)
        .map(|l| {
            let vals: Vec<f64> = per_path.iter().map(|v| v[l]).collect();
            let (mean, stderr) = mean_and_stderr(&vals);
            RefinementRow { level: l, h: h0 / (1u64 << l) as f64, mean_sq_sup_dist: mean, stderr, n_paths, seed }
        })
        .collect())
}

/// Rectangular 2-d histogram grid over two chosen coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSpec {
    pub axes: (usize, usize),
    pub low: (f64, f64),
    pub high: (f64, f64),
    pub bins: (usize, usize),
}

impl BinSpec {
    pub fn edges(&self) -> (Vec<f64>, Vec<f64>) {
        let e = |lo: f64, hi: f64, n: usize| (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
        (e(self.low.0, self.high.0, self.bins.0), e(self.low.1, self.high.1, self.bins.1))
    }

    fn locate(&self, v: f64, lo: f64, hi: f64, n: usize) -> Option<usize> {
        if !(v >= lo && v < hi) {
            return None;
        }
        Some((((v - lo) / (hi - lo)) * n as f64).floor().min(n as f64 - 1.0) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
    pub edges: (Vec<f64>, Vec<f64>),
    /// Row-major `bins.0 × bins.1` masses.
    pub masses: Vec<f64>,
    /// Mass falling outside the binned rectangle.
    pub outside: f64,
}

/// Mean, unbiased covariance and histogram of a sample, summed in order.
pub fn ensemble_stats(samples: &[Vec<f64>], bins: &BinSpec) -> Result<EnsembleStats> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::EmptyEnsemble(n));
    }
    let dim = samples[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|k| compensated_sum(samples.iter().map(|v| v[k])) / n as f64)
        .collect();
    let covariance = SymMatrix::from_upper(dim, |i, j| {
        compensated_sum(samples.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j]))) / (n as f64 - 1.0)
    });
    let (nb0, nb1) = bins.bins;
    let mut counts = vec![0u64; nb0 * nb1];
    let mut outside = 0u64;
    for v in samples {
        let a = bins.locate(v[bins.axes.0], bins.low.0, bins.high.0, nb0);
        let b = bins.locate(v[bins.axes.1], bins.low.1, bins.high.1, nb1);
        match (a, b) {
            (Some(i), Some(j)) => counts[i * nb1 + j] += 1,
            _ => outside += 1,
        }
    }
    Ok(EnsembleStats {
        count: n,
        mean,
        covariance,
        edges: bins.edges(),
        masses: counts.iter().map(|c| *c as f64 / n as f64).collect(),
        outside: outside as f64 / n as f64,
    })
}

/// Exact covariance of the Euler chain for the Kolmogorov example after
/// `n` steps of size `horizon / n`.
pub fn euler_kolmogorov_covariance(alpha: f64, horizon: f64, n: usize) -> SymMatrix {
    let nf = n as f64;
    let s = horizon;
    let c12 = alpha * s * s / 2.0 * (1.0 - 1.0 / nf);
    let c22 = alpha * alpha * s * s * s / 3.0 * (1.0 - 1.0 / nf) * (1.0 - 1.0 / (2.0 * nf));
    SymMatrix::new(2, vec![s, c12, c12, c22]).expect("symmetric by construction")
}
