//! Coefficient data `(F1, F2, σ)` with regularity metadata, presets,
//! mollification and a sampled audit of the structural assumptions.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian::SymMatrix;
use crate::quadrature::Rule;

/// A coefficient map `(t, x1, x2) -> out`.
///
/// Vector fields write `d` entries, matrix fields `d·d` entries row-major.
pub type Field = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

pub fn field<F>(f: F) -> Field
where
    F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
{
    Arc::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// Hölder exponents `β1¹, β1², β2²` and `α¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderExponents {
    pub beta11: f64,
    pub beta12: f64,
    pub beta22: f64,
    pub alpha1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderConstants {
    pub c1: f64,
    pub c2: f64,
    pub c_sigma: f64,
    pub c2_bar: f64,
}

/// Axis-aligned closed box of matrix entries, plus the spectral bound
/// declared for `(D1F2)(D1F2)*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexBox {
    pub low: f64,
    pub high: f64,
    pub spectral_bound: f64,
}

impl ConvexBox {
    pub fn contains(&self, entries: &[f64]) -> bool {
        entries.iter().all(|v| *v >= self.low && *v <= self.high)
    }
}

/// Drift, diffusion and `D1F2` of the degenerate system.
#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    pub dim: usize,
    pub f1: Field,
    pub f2: Field,
    pub sigma: Field,
    pub d1f2: Field,
    pub d1f2_source: DerivativeSource,
    pub holder: HolderExponents,
    pub constants: HolderConstants,
    pub ellipticity: f64,
    pub convex_set: ConvexBox,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("d1f2_source", &self.d1f2_source)
            .field("holder", &self.holder)
            .field("constants", &self.constants)
            .field("ellipticity", &self.ellipticity)
            .field("convex_set", &self.convex_set)
            .finish()
    }
}

/// Default metadata used when a caller does not declare any.
pub fn default_metadata() -> (HolderExponents, HolderConstants, f64, ConvexBox) {
    (
        HolderExponents { beta11: 1.0, beta12: 1.0, beta22: 1.0, alpha1: 0.5 },
        HolderConstants { c1: 1.0, c2: 1.0, c_sigma: 1.0, c2_bar: 1.0 },
        2.0,
        ConvexBox { low: 0.5, high: 2.0, spectral_bound: 4.0 },
    )
}

impl CoefficientSet {
    /// Builds a set from raw fields. Without an explicit `d1f2`, the
    /// derivative falls back to central differences and is flagged.
    pub fn from_fields(
        name: impl Into<String>,
        dim: usize,
        f1: Field,
        f2: Field,
        sigma: Field,
        d1f2: Option<Field>,
    ) -> Self {
        let (holder, constants, ellipticity, convex_set) = default_metadata();
        let (d1f2, d1f2_source) = match d1f2 {
            Some(f) => (f, DerivativeSource::Analytic),
            None => (finite_difference_d1f2(dim, f2.clone()), DerivativeSource::FiniteDifference),
        };
        Self {
            name: name.into(),
            dim,
            f1,
            f2,
            sigma,
            d1f2,
            d1f2_source,
            holder,
            constants,
            ellipticity,
            convex_set,
        }
    }

    pub fn with_holder(mut self, holder: HolderExponents, constants: HolderConstants) -> Self {
        self.holder = holder;
        self.constants = constants;
        self
    }

    pub fn with_ellipticity(mut self, lambda: f64) -> Self {
        self.ellipticity = lambda;
        self
    }

    pub fn with_convex_set(mut self, set: ConvexBox) -> Self {
        self.convex_set = set;
        self
    }

    /// The Kolmogorov example: `F1 = 0`, `σ = Id`, `F2 = α·x1`.
    pub fn kolmogorov(alpha: f64) -> Result<Self> {
        if alpha == 0.0 {
            return Err(Error::ZeroAlpha);
        }
        let set = Self::from_fields(
            "kolmogorov",
            1,
            zero_vector(),
            field(move |_, x1, _, out| out[0] = alpha * x1[0]),
            identity_matrix(1),
            Some(field(move |_, _, _, out| out[0] = alpha)),
        )
        .with_holder(
            HolderExponents { beta11: 1.0, beta12: 1.0, beta22: 1.0, alpha1: 0.5 },
            HolderConstants { c1: 1.0, c2: alpha.abs().max(1.0), c_sigma: 1.0, c2_bar: 1.0 },
        )
        .with_ellipticity(2.0)
        .with_convex_set(ConvexBox {
            low: alpha,
            high: alpha,
            spectral_bound: (alpha * alpha).max(1.0 / (alpha * alpha)).max(2.0),
        });
        Ok(set)
    }

    /// `F1 = 0`, `σ = Id`, `F2 = x1 + sign(x2)|x2|^β` componentwise.
    pub fn holder(beta: f64, dim: usize) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta {beta} must lie in (0, 1]")));
        }
        let c2 = (2f64.powf(1.0 - beta) * (dim as f64).powf(0.5 * (1.0 - beta))).max(1.0);
        let set = Self::from_fields(
            "holder",
            dim,
            zero_vector(),
            field(move |_, x1, x2, out| {
                for i in 0..out.len() {
                    out[i] = x1[i] + x2[i].signum() * x2[i].abs().powf(beta);
                }
            }),
            identity_matrix(dim),
            Some(identity_matrix(dim)),
        )
        .with_holder(
            HolderExponents { beta11: beta, beta12: beta, beta22: beta, alpha1: 0.5 },
            HolderConstants { c1: 1.0, c2, c_sigma: 1.0, c2_bar: 1.0 },
        )
        .with_ellipticity(2.0)
        // Off-diagonal zeros force a box touching 0 once d > 1.
        .with_convex_set(if dim == 1 {
            ConvexBox { low: 0.5, high: 2.0, spectral_bound: 2.0 }
        } else {
            ConvexBox { low: 0.0, high: 1.0, spectral_bound: 2.0 }
        });
        Ok(set)
    }

    /// `F1 = 0`, `σ = Id`, `F2 = κ·x2 + Γ x1` with a constant matrix `Γ`.
    pub fn linear_gamma(gamma: Vec<f64>, kappa: f64) -> Result<Self> {
        let dim = (gamma.len() as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != gamma.len() {
            return Err(Error::InvalidArgument(format!(
                "gamma needs d*d entries, got {}",
                gamma.len()
            )));
        }
        let g = Arc::new(gamma.clone());
        let g2 = g.clone();
        let gm = SymMatrix::from_upper(dim, |i, j| {
            (0..dim).map(|k| gamma[i * dim + k] * gamma[j * dim + k]).sum()
        });
        let ev = gm.eigenvalues();
        if ev[0] <= 0.0 {
            return Err(Error::InvalidArgument("gamma must be invertible".into()));
        }
        let spectral = ev[dim - 1].max(1.0 / ev[0]).max(2.0);
        let low = gamma.iter().copied().fold(f64::INFINITY, f64::min);
        let high = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let set = Self::from_fields(
            "linear-gamma",
            dim,
            zero_vector(),
            field(move |_, x1, x2, out| {
                let n = out.len();
                for i in 0..n {
                    let mut v = kappa * x2[i];
                    for j in 0..n {
                        v += g[i * n + j] * x1[j];
                    }
                    out[i] = v;
                }
            }),
            identity_matrix(dim),
            Some(field(move |_, _, _, out| out.copy_from_slice(&g2))),
        )
        .with_holder(
            HolderExponents { beta11: 1.0, beta12: 1.0, beta22: 1.0, alpha1: 0.5 },
            HolderConstants {
                c1: 1.0,
                c2: ev[dim - 1].sqrt().max(kappa.abs()).max(1.0),
                c_sigma: 1.0,
                c2_bar: 1.0,
            },
        )
        .with_ellipticity(2.0)
        .with_convex_set(ConvexBox { low, high, spectral_bound: spectral });
        Ok(set)
    }

    /// The Lipschitz reference: `F2 = x1 + x2` in one dimension.
    pub fn lipschitz() -> Self {
        let mut set = Self::linear_gamma(vec![1.0], 1.0).expect("valid gamma");
        set.name = "lipschitz".into();
        set
    }

    /// Looks a preset up by name.
    pub fn preset(name: &str, params: &PresetParams) -> Result<Self> {
        match name {
            "kolmogorov" => Self::kolmogorov(params.alpha),
            "holder" => Self::holder(params.beta, 1),
            "linear-gamma" => Self::linear_gamma(vec![params.gamma], params.kappa),
            "lipschitz" => Ok(Self::lipschitz()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn eval_f1(&self, t: f64, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        (self.f1)(t, x1, x2, out)
    }

    pub fn eval_f2(&self, t: f64, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        (self.f2)(t, x1, x2, out)
    }

    pub fn eval_sigma(&self, t: f64, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        (self.sigma)(t, x1, x2, out)
    }

    pub fn eval_d1f2(&self, t: f64, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        (self.d1f2)(t, x1, x2, out)
    }

    /// `a = σσ*`, written row-major into `out` (`d·d`). `scratch` holds σ.
    pub fn eval_a(&self, t: f64, x1: &[f64], x2: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let d = self.dim;
        self.eval_sigma(t, x1, x2, scratch);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| scratch[i * d + k] * scratch[j * d + k]).sum();
            }
        }
    }

    /// Full drift `(F1, F2)` at a stacked state `x = (x1, x2)`.
    pub fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; 2 * d];
        let (x1, x2) = x.split_at(d);
        let (o1, o2) = out.split_at_mut(d);
        self.eval_f1(t, x1, x2, o1);
        self.eval_f2(t, x1, x2, o2);
        out
    }

    pub fn a_matrix(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        let mut a = vec![0.0; d * d];
        self.eval_a(t, &x[..d], &x[d..], &mut s, &mut a);
        a
    }

    pub fn sigma_matrix(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        self.eval_sigma(t, &x[..d], &x[d..], &mut s);
        s
    }

    pub fn d1f2_matrix(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        self.eval_d1f2(t, &x[..d], &x[d..], &mut m);
        m
    }
}

/// Numeric preset parameters as they come from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PresetParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.8, gamma: 1.0, kappa: 0.0 }
    }
}

pub fn zero_vector() -> Field {
    field(|_, _, _, out| out.fill(0.0))
}

pub fn identity_matrix(dim: usize) -> Field {
    field(move |_, _, _, out| {
        out.fill(0.0);
        for i in 0..dim {
            out[i * dim + i] = 1.0;
        }
    })
}

pub fn constant_vector(values: Vec<f64>) -> Field {
    field(move |_, _, _, out| out.copy_from_slice(&values))
}

fn finite_difference_d1f2(dim: usize, f2: Field) -> Field {
    field(move |t, x1, x2, out| {
        let mut xp = x1.to_vec();
        let mut fp = vec![0.0; dim];
        let mut fm = vec![0.0; dim];
        for j in 0..dim {
            let h = 1e-5 * x1[j].abs().max(1.0);
            xp[j] = x1[j] + h;
            f2(t, &xp, x2, &mut fp);
            xp[j] = x1[j] - h;
            f2(t, &xp, x2, &mut fm);
            xp[j] = x1[j];
            for i in 0..dim {
                out[i * dim + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    })
}

fn bump(z: f64) -> f64 {
    if z.abs() < 1.0 {
        (-1.0 / (1.0 - z * z)).exp()
    } else {
        0.0
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Mollification index, quadrature density and normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollifierConfig {
    pub n: usize,
    pub dim: usize,
    pub nodes_per_axis: usize,
    /// Time convolution clamps `t - s` into `[0, horizon]` when set.
    pub horizon: Option<f64>,
    /// Space constant of the discrete midpoint kernel.
    pub c1: f64,
    /// Time constant of the discrete midpoint kernel.
    pub c2: f64,
    /// Constants making the continuous kernels integrate to one.
    pub c1_continuous: f64,
    pub c2_continuous: f64,
}

impl MollifierConfig {
    pub fn new(n: usize, dim: usize, horizon: Option<f64>) -> Result<Self> {
        Self::with_nodes(n, dim, horizon, 21)
    }

    pub fn with_nodes(n: usize, dim: usize, horizon: Option<f64>, nodes_per_axis: usize) -> Result<Self> {
        if n == 0 || dim == 0 || nodes_per_axis == 0 {
            return Err(Error::InvalidArgument("mollifier index, dimension and nodes must be positive".into()));
        }
        let cell = 2.0 / nodes_per_axis as f64;
        let mids: Vec<f64> = (0..nodes_per_axis).map(|k| -1.0 + (k as f64 + 0.5) * cell).collect();
        let time_mass: f64 = mids.iter().map(|z| bump(*z) * cell).sum();
        let mut space_mass = 0.0;
        for_each_grid_point(&mids, 2 * dim, |z| {
            let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            space_mass += bump(r) * cell.powi(2 * dim as i32);
        });

        // Continuous integrals by a fine Gauss rule; the bump is flat at ±1.
        let fine = Rule::composite_gauss(0.0, 1.0, 200, 8);
        let radial = fine.integrate(|r| bump(r) * r.powi(2 * dim as i32 - 1));
        let sphere = 2.0 * std::f64::consts::PI.powi(dim as i32) / factorial(dim - 1);
        let line = 2.0 * fine.integrate(bump);

        Ok(Self {
            n,
            dim,
            nodes_per_axis,
            horizon,
            c1: 1.0 / space_mass,
            c2: 1.0 / time_mass,
            c1_continuous: 1.0 / (sphere * radial),
            c2_continuous: 1.0 / line,
        })
    }

    /// Space kernel `c1 n^{2d} φ(n|y|)` with the continuous constant.
    pub fn space_kernel(&self, y: &[f64]) -> f64 {
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.c1_continuous * (self.n as f64).powi(2 * self.dim as i32) * bump(self.n as f64 * r)
    }

    /// Time kernel `c2 n φ(n|s|)` with the continuous constant.
    pub fn time_kernel(&self, s: f64) -> f64 {
        self.c2_continuous * self.n as f64 * bump(self.n as f64 * s)
    }

    /// Nonzero nodes of the tensor midpoint rule: time offsets, space
    /// offsets and the matching weights.
    pub fn stencil(&self) -> Result<Stencil> {
        let m = self.nodes_per_axis;
        let cell = 2.0 / m as f64;
        let nf = self.n as f64;
        let mids: Vec<f64> = (0..m).map(|k| -1.0 + (k as f64 + 0.5) * cell).collect();
        let mut time = Vec::new();
        for z in &mids {
            let w = self.c2 * bump(*z) * cell;
            if w > 0.0 {
                time.push((z / nf, w));
            }
        }
        let mut space = Vec::new();
        let mut space_w = Vec::new();
        for_each_grid_point(&mids, 2 * self.dim, |z| {
            let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w = self.c1 * bump(r) * cell.powi(2 * self.dim as i32);
            if w > 0.0 {
                space.extend(z.iter().map(|v| v / nf));
                space_w.push(w);
            }
        });
        let total_t: f64 = time.iter().map(|p| p.1).sum();
        let total_s: f64 = space_w.iter().sum();
        for total in [total_t, total_s] {
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::QuadratureFailure(format!(
                    "mollifier kernel mass {total} deviates from 1"
                )));
            }
        }
        Ok(Stencil { dim: self.dim, time, space, space_weights: space_w, horizon: self.horizon })
    }
}

fn for_each_grid_point(mids: &[f64], dims: usize, mut f: impl FnMut(&[f64])) {
    let m = mids.len();
    let mut idx = vec![0usize; dims];
    let mut z = vec![mids[0]; dims];
    loop {
        f(&z);
        let mut k = 0;
        loop {
            if k == dims {
                return;
            }
            idx[k] += 1;
            if idx[k] < m {
                z[k] = mids[idx[k]];
                break;
            }
            idx[k] = 0;
            z[k] = mids[0];
            k += 1;
        }
    }
}

/// Precomputed convolution nodes.
#[derive(Debug, Clone)]
pub struct Stencil {
    dim: usize,
    time: Vec<(f64, f64)>,
    space: Vec<f64>,
    space_weights: Vec<f64>,
    horizon: Option<f64>,
}

impl Stencil {
    pub fn node_count(&self) -> usize {
        self.time.len() * self.space_weights.len()
    }

    fn convolve(&self, f: &Field, width: usize, t: f64, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut y1 = vec![0.0; d];
        let mut y2 = vec![0.0; d];
        let mut buf = vec![0.0; width];
        let mut acc = vec![0.0; width];
        for &(ds, wt) in &self.time {
            let mut tt = t - ds;
            if let Some(h) = self.horizon {
                tt = tt.clamp(0.0, h);
            }
            for (k, &ws) in self.space_weights.iter().enumerate() {
                let off = &self.space[k * 2 * d..(k + 1) * 2 * d];
                for i in 0..d {
                    y1[i] = x1[i] - off[i];
                    y2[i] = x2[i] - off[d + i];
                }
                f(tt, &y1, &y2, &mut buf);
                let w = wt * ws;
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += w * b;
                }
            }
        }
        out.copy_from_slice(&acc);
    }
}

/// Space-time convolution of every coefficient with the mollifier.
///
/// `a = σσ*` is convolved and the returned `σ` is its Cholesky factor.
pub fn mollify(coeffs: &CoefficientSet, config: &MollifierConfig) -> Result<CoefficientSet> {
    if config.dim != coeffs.dim {
        return Err(Error::DimensionMismatch { expected: coeffs.dim, got: config.dim });
    }
    let stencil = Arc::new(config.stencil()?);
    let d = coeffs.dim;

    let wrap = |f: Field, width: usize| -> Field {
        let st = stencil.clone();
        field(move |t, x1, x2, out| st.convolve(&f, width, t, x1, x2, out))
    };

    let sigma = coeffs.sigma.clone();
    let a_field = field(move |t, x1, x2, out| {
        let mut s = vec![0.0; d * d];
        sigma(t, x1, x2, &mut s);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
            }
        }
    });
    let a_moll = wrap(a_field, d * d);
    let sigma_moll = field(move |t, x1, x2, out| {
        let mut a = vec![0.0; d * d];
        a_moll(t, x1, x2, &mut a);
        lower_cholesky(&a, d, out);
    });

    Ok(CoefficientSet {
        name: format!("{}-mollified-{}", coeffs.name, config.n),
        dim: d,
        f1: wrap(coeffs.f1.clone(), d),
        f2: wrap(coeffs.f2.clone(), d),
        sigma: sigma_moll,
        d1f2: wrap(coeffs.d1f2.clone(), d * d),
        d1f2_source: coeffs.d1f2_source,
        holder: coeffs.holder,
        constants: coeffs.constants,
        ellipticity: coeffs.ellipticity,
        convex_set: coeffs.convex_set,
    })
}

fn lower_cholesky(a: &[f64], d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= out[j * d + k] * out[j * d + k];
        }
        let ljj = s.max(0.0).sqrt();
        out[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= out[i * d + k] * out[j * d + k];
            }
            out[i * d + j] = if ljj > 0.0 { v / ljj } else { 0.0 };
        }
    }
}

/// Sampling box, time window, pair count and seed for the audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSpec {
    pub low: f64,
    pub high: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { low: -2.0, high: 2.0, t_low: 0.0, t_high: 1.0, count: 2000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub assumption: String,
    pub message: String,
    pub t: f64,
    pub x: Vec<f64>,
    pub x_prime: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub h1_exponents: bool,
    pub h1_f1: bool,
    pub h1_f2: bool,
    pub h1_sigma: bool,
    pub h2: bool,
    pub h3a: bool,
    pub h3b: bool,
    /// Largest sampled quotient against each declared inequality.
    pub f1_quotient: f64,
    pub f2_quotient: f64,
    pub sigma_quotient: f64,
    pub d1f2_quotient: f64,
    /// Extreme Rayleigh quotients of `σσ*` over the sample.
    pub ellipticity_interval: (f64, f64),
    /// Extreme eigenvalues of `(D1F2)(D1F2)*` over the sample.
    pub d1f2_spectral_interval: (f64, f64),
    pub box_violations: usize,
    pub d1f2_source: DerivativeSource,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.h1_exponents && self.h1_f1 && self.h1_f2 && self.h1_sigma && self.h2 && self.h3a && self.h3b
    }
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn gram_eigen(m: &[f64], d: usize, transpose_first: bool) -> Vec<f64> {
    SymMatrix::from_upper(d, |i, j| {
        (0..d)
            .map(|k| if transpose_first { m[k * d + i] * m[k * d + j] } else { m[i * d + k] * m[j * d + k] })
            .sum()
    })
    .eigenvalues()
}

struct PairSample {
    t: f64,
    x: Vec<f64>,
    xp: Vec<f64>,
    q_f1: f64,
    q_f2: f64,
    q_sigma: f64,
    q_d1f2: Option<f64>,
    ell: (f64, f64),
    spec: (f64, f64),
    in_box: bool,
}

/// Samples point pairs and checks the declared regularity, ellipticity and
/// non-degeneracy bounds.
pub fn check_assumptions(coeffs: &CoefficientSet, spec: &SampleSpec) -> Result<AssumptionReport> {
    if spec.count < 2 {
        return Err(Error::InvalidArgument("sample count must be at least 2".into()));
    }
    let d = coeffs.dim;
    let h = coeffs.holder;
    let samples: Vec<PairSample> = (0..spec.count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64);
            let t = rng.random_range(spec.t_low..=spec.t_high);
            let x: Vec<f64> = (0..2 * d).map(|_| rng.random_range(spec.low..spec.high)).collect();
            let mode = k % 3;
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            let mut xp = x.clone();
            let mut d1f2_pair = mode == 0;
            for i in 0..2 * d {
                let moves = match mode {
                    0 => i < d,
                    1 => i >= d,
                    _ => true,
                };
                if moves {
                    xp[i] += scale * rng.random_range(-1.0..1.0);
                }
            }
            if xp == x {
                d1f2_pair = false;
            }
            let (x1, x2) = x.split_at(d);
            let (y1, y2) = xp.split_at(d);
            let dx1 = diff_norm(x1, y1);
            let dx2 = diff_norm(x2, y2);

            let mut a = vec![0.0; d];
            let mut b = vec![0.0; d];
            coeffs.eval_f1(t, x1, x2, &mut a);
            coeffs.eval_f1(t, y1, y2, &mut b);
            let den1 = dx1.powf(h.beta11) + dx2.powf(h.beta12);
            let q_f1 = if den1 > 0.0 { diff_norm(&a, &b) / den1 } else { 0.0 };
            coeffs.eval_f2(t, x1, x2, &mut a);
            coeffs.eval_f2(t, y1, y2, &mut b);
            let den2 = dx1 + dx2.powf(h.beta22);
            let q_f2 = if den2 > 0.0 { diff_norm(&a, &b) / den2 } else { 0.0 };

            let mut sa = vec![0.0; d * d];
            let mut sb = vec![0.0; d * d];
            coeffs.eval_sigma(t, x1, x2, &mut sa);
            coeffs.eval_sigma(t, y1, y2, &mut sb);
            let dens = dx1 + dx2;
            let q_sigma = if dens > 0.0 { diff_norm(&sa, &sb) / dens } else { 0.0 };
            let ev = gram_eigen(&sa, d, false);
            let ell = (ev[0], ev[d - 1]);

            let mut da = vec![0.0; d * d];
            let mut db = vec![0.0; d * d];
            coeffs.eval_d1f2(t, x1, x2, &mut da);
            let q_d1f2 = if d1f2_pair && dx1 > 0.0 {
                coeffs.eval_d1f2(t, y1, x2, &mut db);
                Some(diff_norm(&da, &db) / dx1.powf(h.alpha1))
            } else {
                None
            };
            let ev = gram_eigen(&da, d, false);
            let in_box = coeffs.convex_set.contains(&da);
            PairSample {
                t,
                x,
                xp,
                q_f1,
                q_f2,
                q_sigma,
                q_d1f2,
                ell,
                spec: (ev[0], ev[d - 1]),
                in_box,
            }
        })
        .collect();

    let slack = 1.0 + 1e-9;
    let c = coeffs.constants;
    let lambda = coeffs.ellipticity;
    let lambda_bar = coeffs.convex_set.spectral_bound;
    let mut violations = Vec::new();

    let exponents_ok = h.beta12 > 2.0 / 3.0 && h.beta22 > 2.0 / 3.0;
    if !exponents_ok {
        violations.push(Violation {
            assumption: "H1".into(),
            message: "(H1) exponent not greater than 2/3".into(),
            t: f64::NAN,
            x: vec![h.beta12, h.beta22],
            x_prime: None,
        });
    }
    if lambda <= 1.0 || lambda_bar <= 1.0 {
        violations.push(Violation {
            assumption: "H2".into(),
            message: "declared ellipticity or spectral bound not greater than 1".into(),
            t: f64::NAN,
            x: vec![lambda, lambda_bar],
            x_prime: None,
        });
    }

    let mut out = AssumptionReport {
        h1_exponents: exponents_ok,
        h1_f1: true,
        h1_f2: true,
        h1_sigma: true,
        h2: lambda > 1.0,
        h3a: true,
        h3b: lambda_bar > 1.0,
        f1_quotient: 0.0,
        f2_quotient: 0.0,
        sigma_quotient: 0.0,
        d1f2_quotient: 0.0,
        ellipticity_interval: (f64::INFINITY, f64::NEG_INFINITY),
        d1f2_spectral_interval: (f64::INFINITY, f64::NEG_INFINITY),
        box_violations: 0,
        d1f2_source: coeffs.d1f2_source,
        violations,
    };

    let flag = |out: &mut AssumptionReport, name: &str, msg: String, s: &PairSample, pair: bool| {
        out.violations.push(Violation {
            assumption: name.into(),
            message: msg,
            t: s.t,
            x: s.x.clone(),
            x_prime: pair.then(|| s.xp.clone()),
        });
    };

    for s in &samples {
        out.f1_quotient = out.f1_quotient.max(s.q_f1);
        out.f2_quotient = out.f2_quotient.max(s.q_f2);
        out.sigma_quotient = out.sigma_quotient.max(s.q_sigma);
        if s.q_f1 > c.c1 * slack {
            if out.h1_f1 {
                flag(&mut out, "H1", format!("F1 Hölder quotient {} exceeds C1 = {}", s.q_f1, c.c1), s, true);
            }
            out.h1_f1 = false;
        }
        if s.q_f2 > c.c2 * slack {
            if out.h1_f2 {
                flag(&mut out, "H1", format!("F2 Hölder quotient {} exceeds C2 = {}", s.q_f2, c.c2), s, true);
            }
            out.h1_f2 = false;
        }
        if s.q_sigma > c.c_sigma * slack {
            if out.h1_sigma {
                flag(&mut out, "H1", format!("sigma Lipschitz quotient {} exceeds C_sigma = {}", s.q_sigma, c.c_sigma), s, true);
            }
            out.h1_sigma = false;
        }
        if let Some(q) = s.q_d1f2 {
            out.d1f2_quotient = out.d1f2_quotient.max(q);
            if q > c.c2_bar * slack {
                if out.h3a {
                    flag(&mut out, "H3-a", format!("D1F2 Hölder quotient {q} exceeds C2_bar = {}", c.c2_bar), s, true);
                }
                out.h3a = false;
            }
        }
        let (lo, hi) = out.ellipticity_interval;
        out.ellipticity_interval = (lo.min(s.ell.0), hi.max(s.ell.1));
        if s.ell.0 < slack.recip() / lambda || s.ell.1 > lambda * slack {
            if out.h2 {
                flag(&mut out, "H2", format!("sigma sigma* spectrum [{}, {}] outside [1/L, L]", s.ell.0, s.ell.1), s, false);
            }
            out.h2 = false;
        }
        let (lo, hi) = out.d1f2_spectral_interval;
        out.d1f2_spectral_interval = (lo.min(s.spec.0), hi.max(s.spec.1));
        if !s.in_box {
            out.box_violations += 1;
            if out.h3b {
                flag(&mut out, "H3-b", "D1F2 leaves the declared box".into(), s, false);
            }
            out.h3b = false;
        }
        if s.spec.0 < slack.recip() / lambda_bar || s.spec.1 > lambda_bar * slack {
            if out.h3b {
                flag(&mut out, "H3-b", format!("D1F2 spectrum [{}, {}] outside the declared bound", s.spec.0, s.spec.1), s, false);
            }
            out.h3b = false;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuous_kernels_integrate_to_one() {
        for dim in [1, 2] {
            let cfg = MollifierConfig::new(4, dim, None).unwrap();
            let rule = Rule::composite_gauss(-0.25, 0.25, 200, 8);
            let t_mass = rule.integrate(|s| cfg.time_kernel(s));
            assert!((t_mass - 1.0).abs() < 1e-8, "{t_mass}");
            // radial integral of the space kernel
            let radial = Rule::composite_gauss(0.0, 0.25, 200, 8);
            let sphere = 2.0 * std::f64::consts::PI.powi(dim as i32) / factorial(dim - 1);
            let s_mass = sphere
                * radial.integrate(|r| cfg.space_kernel(&[r]) * r.powi(2 * dim as i32 - 1));
            assert!((s_mass - 1.0).abs() < 1e-8, "{s_mass}");
        }
    }

    #[test]
    fn stencil_is_normalized() {
        let cfg = MollifierConfig::new(8, 1, None).unwrap();
        let st = cfg.stencil().unwrap();
        let t: f64 = st.time.iter().map(|p| p.1).sum();
        let s: f64 = st.space_weights.iter().sum();
        assert!((t - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert!(st.space.iter().all(|v| v.abs() < 1.0 / 8.0));
    }

    #[test]
    fn constant_field_is_unchanged() {
        let set = CoefficientSet::from_fields(
            "const",
            1,
            zero_vector(),
            constant_vector(vec![3.25]),
            identity_matrix(1),
            Some(field(|_, _, _, o| o[0] = 1.0)),
        );
        let m = mollify(&set, &MollifierConfig::new(5, 1, Some(1.0)).unwrap()).unwrap();
        let mut out = [0.0];
        m.eval_f2(0.5, &[0.3], &[-0.7], &mut out);
        assert!((out[0] - 3.25).abs() < 1e-8);
        let mut s = [0.0];
        m.eval_sigma(0.0, &[0.0], &[0.0], &mut s);
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mollification_is_linear() {
        let f = field(|t, x1, x2, o| o[0] = (x2[0]).abs().powf(0.7) + t * x1[0]);
        let g = field(|_, x1, x2, o| o[0] = (x1[0] - x2[0]).sin());
        let (fc, gc) = (f.clone(), g.clone());
        let sum = field(move |t, x1, x2, o| {
            let mut a = [0.0];
            let mut b = [0.0];
            fc(t, x1, x2, &mut a);
            gc(t, x1, x2, &mut b);
            o[0] = a[0] + b[0];
        });
        let cfg = MollifierConfig::new(6, 1, Some(1.0)).unwrap();
        let mk = |f2: Field| {
            mollify(&CoefficientSet::from_fields("t", 1, zero_vector(), f2, identity_matrix(1), None), &cfg).unwrap()
        };
        let (mf, mg, ms) = (mk(f), mk(g), mk(sum));
        for k in 0..20 {
            let x1 = [-1.0 + 0.1 * k as f64];
            let x2 = [0.5 - 0.07 * k as f64];
            let (mut a, mut b, mut c) = ([0.0], [0.0], [0.0]);
            mf.eval_f2(0.4, &x1, &x2, &mut a);
            mg.eval_f2(0.4, &x1, &x2, &mut b);
            ms.eval_f2(0.4, &x1, &x2, &mut c);
            assert!((a[0] + b[0] - c[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn identity_sigma_audit() {
        let set = CoefficientSet::kolmogorov(1.0).unwrap();
        let rep = check_assumptions(&set, &SampleSpec { count: 300, ..Default::default() }).unwrap();
        assert_eq!(rep.ellipticity_interval, (1.0, 1.0));
        assert!(rep.h2);
    }

    #[test]
    fn absolute_power_drift_passes() {
        let set = CoefficientSet::from_fields(
            "abs-power",
            1,
            zero_vector(),
            field(|_, x1, x2, o| o[0] = x1[0] + x2[0].abs().powf(0.8)),
            identity_matrix(1),
            Some(field(|_, _, _, o| o[0] = 1.0)),
        )
        .with_holder(
            HolderExponents { beta11: 0.8, beta12: 0.8, beta22: 0.8, alpha1: 0.5 },
            HolderConstants { c1: 1.0, c2: 1.0, c_sigma: 1.0, c2_bar: 1.0 },
        );
        let rep = check_assumptions(&set, &SampleSpec { count: 3000, seed: 5, ..Default::default() }).unwrap();
        assert!(rep.h1_f2 && rep.h1_exponents && rep.h3a && rep.h3b, "{rep:?}");
        assert!(rep.f2_quotient <= 1.0 + 1e-9);
        assert!(rep.f2_quotient > 0.5);
    }

    #[test]
    fn low_exponent_is_flagged() {
        let mut set = CoefficientSet::holder(0.8, 1).unwrap();
        set.holder.beta22 = 0.5;
        let rep = check_assumptions(&set, &SampleSpec { count: 50, ..Default::default() }).unwrap();
        assert!(!rep.h1_exponents);
        assert!(rep.violations.iter().any(|v| v.message == "(H1) exponent not greater than 2/3"));
    }

    #[test]
    fn audit_is_deterministic() {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let spec = SampleSpec { count: 200, seed: 9, ..Default::default() };
        assert_eq!(check_assumptions(&set, &spec).unwrap(), check_assumptions(&set, &spec).unwrap());
    }

    #[test]
    fn finite_difference_fallback_is_flagged() {
        let set = CoefficientSet::from_fields(
            "fd",
            1,
            zero_vector(),
            field(|_, x1, _, o| o[0] = 2.0 * x1[0] + 0.1 * x1[0].sin()),
            identity_matrix(1),
            None,
        );
        assert_eq!(set.d1f2_source, DerivativeSource::FiniteDifference);
        let mut m = [0.0];
        set.eval_d1f2(0.0, &[0.3], &[0.0], &mut m);
        assert!((m[0] - (2.0 + 0.1 * 0.3f64.cos())).abs() < 1e-8);
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(
            CoefficientSet::preset("nope", &PresetParams::default()),
            Err(Error::UnknownPreset(_))
        ));
        assert!(matches!(CoefficientSet::kolmogorov(0.0), Err(Error::ZeroAlpha)));
    }
}
