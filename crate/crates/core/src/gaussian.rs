//! Dense symmetric matrices, jittered Cholesky, Gaussian densities and
//! central finite differences.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries; symmetry must hold exactly.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: entries.len() });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if entries[i * dim + j] != entries[j * dim + i] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            entries.extend_from_slice(r);
        }
        Self::new(dim, entries)
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self { dim, entries }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![0.0; dim * dim] }
    }

    /// Builds from the upper triangle, mirroring into the lower one.
    pub fn from_upper(dim: usize, mut fill: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = fill(i, j);
                entries[i * dim + j] = v;
                entries[j * dim + i] = v;
            }
        }
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.dim).fold(0.0, |m, i| m.max(self.get(i, i)))
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.entries
            .chunks(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn determinant(&self) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.entries);
        m.determinant()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.entries);
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl serde::Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&self.to_rows(), ser)
    }
}

/// Lower-triangular factor with the diagonal shift that made it succeed.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
    pub jitter_used: f64,
}

impl CholeskyFactor {
    /// Zero factor of a point mass (no spread at all).
    pub fn point_mass(dim: usize) -> Self {
        Self { dim, lower: vec![0.0; dim * dim], jitter_used: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    pub fn lower_rows(&self) -> Vec<Vec<f64>> {
        self.lower.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i + 1];
            out[i] = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut acc = b[i];
            for k in 0..i {
                acc -= self.lower[i * n + k] * b[k];
            }
            b[i] = acc / self.lower[i * n + i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut acc = b[i];
            for k in (i + 1)..n {
                acc -= self.lower[k * n + i] * b[k];
            }
            b[i] = acc / self.lower[i * n + i];
        }
    }

    /// `M⁻¹ b` through two triangular solves.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim).map(|i| 2.0 * self.lower[i * self.dim + i].ln()).sum()
    }

    /// `rᵀ M⁻¹ r`.
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        let mut z = r.to_vec();
        self.solve_lower_in_place(&mut z);
        z.iter().map(|v| v * v).sum()
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_upper(n, |i, j| (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k)).sum())
    }
}

fn try_cholesky(m: &SymMatrix, jitter: f64) -> Option<Vec<f64>> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m.get(j, j) + jitter;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut v = m.get(i, j);
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / djj;
        }
    }
    Some(l)
}

/// Cholesky factorization retrying with a doubling diagonal shift.
///
/// The schedule is `0, ε, 2ε, 4ε, …` with `ε = 1e-12·max diag`, stopping at
/// the first shift exceeding `max_jitter`.
pub fn cholesky_with_jitter(m: &SymMatrix, max_jitter: f64) -> Result<CholeskyFactor> {
    if max_jitter < 0.0 {
        return Err(Error::InvalidArgument("max_jitter must be non-negative".into()));
    }
    let dim = m.dim();
    if let Some(lower) = try_cholesky(m, 0.0) {
        return Ok(CholeskyFactor { dim, lower, jitter_used: 0.0 });
    }
    let scale = m.max_diag();
    let mut eps = if scale > 0.0 { 1e-12 * scale } else { 1e-12 };
    while eps <= max_jitter {
        if let Some(lower) = try_cholesky(m, eps) {
            return Ok(CholeskyFactor { dim, lower, jitter_used: eps });
        }
        eps *= 2.0;
    }
    Err(Error::NotPositiveDefinite { max_jitter })
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log-density of `N(mean, L Lᵀ)` at `point`.
pub fn mvn_logpdf(mean: &[f64], chol: &CholeskyFactor, point: &[f64]) -> Result<f64> {
    let n = chol.dim();
    if mean.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mean.len() });
    }
    if point.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: point.len() });
    }
    let r: Vec<f64> = point.iter().zip(mean).map(|(p, m)| p - m).collect();
    let q = chol.quad_form(&r);
    Ok(-0.5 * (n as f64 * LN_2PI + chol.log_det() + q))
}

/// `n` draws `mean + L z` with standard normal `z`.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &[f64],
    chol: &CholeskyFactor,
    rng: &mut R,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    let dim = chol.dim();
    if mean.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: mean.len() });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut z = vec![0.0; dim];
    let mut lz = vec![0.0; dim];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        chol.mul_lower(&z, &mut lz);
        out.push(mean.iter().zip(&lz).map(|(m, v)| m + v).collect());
    }
    Ok(out)
}

/// Central finite-difference stencil settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffScheme {
    pub order: u8,
    pub scale: f64,
}

impl FiniteDiffScheme {
    pub fn first() -> Self {
        Self { order: 1, scale: 1e-5 }
    }

    pub fn second() -> Self {
        Self { order: 2, scale: 1e-4 }
    }

    pub fn step(&self, coordinate: f64) -> f64 {
        self.scale * coordinate.abs().max(1.0)
    }
}

/// Gradient or Hessian returned by [`central_diff`].
#[derive(Debug, Clone, PartialEq)]
pub enum Derivative {
    Gradient(Vec<f64>),
    Hessian(Vec<Vec<f64>>),
}

pub fn central_gradient(f: impl Fn(&[f64]) -> f64, scheme: &FiniteDiffScheme, point: &[f64]) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let h = scheme.step(point[i]);
            x[i] = point[i] + h;
            let fp = f(&x);
            x[i] = point[i] - h;
            let fm = f(&x);
            x[i] = point[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn central_hessian(f: impl Fn(&[f64]) -> f64, scheme: &FiniteDiffScheme, point: &[f64]) -> Vec<Vec<f64>> {
    let n = point.len();
    let mut x = point.to_vec();
    let f0 = f(point);
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        let hi = scheme.step(point[i]);
        x[i] = point[i] + hi;
        let fp = f(&x);
        x[i] = point[i] - hi;
        let fm = f(&x);
        x[i] = point[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = scheme.step(point[j]);
            let mut corner = |si: f64, sj: f64| {
                x[i] = point[i] + si * hi;
                x[j] = point[j] + sj * hj;
                let v = f(&x);
                x[i] = point[i];
                x[j] = point[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Central-difference derivative of the order requested by `scheme`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, scheme: &FiniteDiffScheme, point: &[f64]) -> Result<Derivative> {
    if !(scheme.scale > 0.0) {
        return Err(Error::InvalidArgument("finite-difference scale must be positive".into()));
    }
    match scheme.order {
        1 => Ok(Derivative::Gradient(central_gradient(f, scheme, point))),
        2 => Ok(Derivative::Hessian(central_hessian(f, scheme, point))),
        o => Err(Error::InvalidArgument(format!("finite-difference order {o} not in {{1, 2}}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k1() -> SymMatrix {
        SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0 / 3.0]]).unwrap()
    }

    #[test]
    fn identity_factor_is_identity() {
        let c = cholesky_with_jitter(&SymMatrix::identity(2), 0.0).unwrap();
        assert_eq!(c.lower_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(c.jitter_used, 0.0);
    }

    #[test]
    fn kolmogorov_factor() {
        let c = cholesky_with_jitter(&k1(), 0.0).unwrap();
        assert!((c.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((c.get(1, 0) - 0.5).abs() < 1e-15);
        assert!((c.get(1, 1) - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
        let back = c.reconstruct();
        for (a, b) in back.entries().iter().zip(k1().entries()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let m = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky_with_jitter(&m, 0.0), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let c = cholesky_with_jitter(&m, 1e-8).unwrap();
        assert!(c.jitter_used > 0.0 && c.jitter_used <= 1e-8);
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(SymMatrix::new(2, vec![1.0, 0.1, 0.2, 1.0]).is_err());
    }

    #[test]
    fn logpdf_examples() {
        let id = cholesky_with_jitter(&SymMatrix::identity(2), 0.0).unwrap();
        let v = mvn_logpdf(&[0.0, 0.0], &id, &[0.0, 0.0]).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);

        let c = cholesky_with_jitter(&k1(), 0.0).unwrap();
        let peak = (3f64.sqrt() / std::f64::consts::PI).ln();
        assert!((mvn_logpdf(&[0.0, 0.0], &c, &[0.0, 0.0]).unwrap() - peak).abs() < 1e-13);
        assert!((mvn_logpdf(&[0.0, 0.0], &c, &[1.0, 0.0]).unwrap() - (peak - 2.0)).abs() < 1e-13);
        assert!(mvn_logpdf(&[0.0], &c, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn logpdf_normalizes() {
        // trapezoid over a ±8σ box along the coordinate axes
        let c = cholesky_with_jitter(&k1(), 0.0).unwrap();
        let (s1, s2) = (1.0f64, (1.0f64 / 3.0).sqrt());
        let n = 400;
        let mut total = 0.0;
        for i in 0..=n {
            let y1 = -8.0 * s1 + 16.0 * s1 * i as f64 / n as f64;
            let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
            for j in 0..=n {
                let y2 = -8.0 * s2 + 16.0 * s2 * j as f64 / n as f64;
                let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
                total += wi * wj * mvn_logpdf(&[0.0, 0.0], &c, &[y1, y2]).unwrap().exp();
            }
        }
        total *= (16.0 * s1 / n as f64) * (16.0 * s2 / n as f64);
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn point_mass_samples_equal_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = mvn_sample(&[1.0, -2.0], &CholeskyFactor::point_mass(2), &mut rng, 5).unwrap();
        assert!(s.iter().all(|v| v == &vec![1.0, -2.0]));
    }

    #[test]
    fn sample_moments_match_k1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = cholesky_with_jitter(&k1(), 0.0).unwrap();
        let n = 200_000;
        let s = mvn_sample(&[0.0, 0.0], &c, &mut rng, n).unwrap();
        let m: Vec<f64> = (0..2).map(|k| s.iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        assert!(m[0].abs() < 0.01 && m[1].abs() < 0.01);
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let cov = s.iter().map(|v| (v[i] - m[i]) * (v[j] - m[j])).sum::<f64>() / (n as f64 - 1.0);
            let exact = k1().get(i, j);
            assert!(((cov - exact) / exact).abs() < 0.03, "({i},{j}) {cov}");
        }
    }

    #[test]
    fn gradient_of_square() {
        let g = central_gradient(|x| x[0] * x[0], &FiniteDiffScheme::first(), &[3.0]);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let z = central_gradient(|_| 4.2, &FiniteDiffScheme::first(), &[3.0, -1.0]);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_of_logpdf_matches_analytic() {
        let c = cholesky_with_jitter(&k1(), 0.0).unwrap();
        let mean = [0.3, -0.2];
        let x = [0.7, 0.4];
        let num = central_gradient(|p| mvn_logpdf(&mean, &c, p).unwrap(), &FiniteDiffScheme::first(), &x);
        let r: Vec<f64> = x.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let exact: Vec<f64> = c.solve(&r).iter().map(|v| -v).collect();
        for (a, b) in num.iter().zip(&exact) {
            assert!(((a - b) / b).abs() < 1e-5);
        }
    }

    #[test]
    fn dispatch_rejects_bad_order() {
        let s = FiniteDiffScheme { order: 3, scale: 1e-4 };
        assert!(central_diff(|x| x[0], &s, &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn quadratics_are_differentiated_exactly(
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
            x0 in -2.0f64..2.0, y0 in -2.0f64..2.0,
        ) {
            let f = |p: &[f64]| a * p[0] * p[0] + b * p[0] * p[1] + c * p[1] * p[1] + p[0] - 2.0 * p[1];
            let g = central_gradient(f, &FiniteDiffScheme::first(), &[x0, y0]);
            let ge = [2.0 * a * x0 + b * y0 + 1.0, b * x0 + 2.0 * c * y0 - 2.0];
            for (u, v) in g.iter().zip(&ge) {
                prop_assert!((u - v).abs() <= 1e-8 * v.abs().max(1.0));
            }
            let h = central_hessian(f, &FiniteDiffScheme::second(), &[x0, y0]);
            let he = [[2.0 * a, b], [b, 2.0 * c]];
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((h[i][j] - he[i][j]).abs() <= 1e-6 * he[i][j].abs().max(1.0));
                }
            }
        }

        #[test]
        fn factor_reproduces_spd_input(a in 0.1f64..5.0, b in -1.0f64..1.0, c in 0.1f64..5.0) {
            let off = b * (a * c).sqrt() * 0.99;
            let m = SymMatrix::from_rows(&[vec![a, off], vec![off, c]]).unwrap();
            let f = cholesky_with_jitter(&m, 0.0).unwrap();
            prop_assert_eq!(f.jitter_used, 0.0);
            let back = f.reconstruct();
            for (u, v) in back.entries().iter().zip(m.entries()) {
                prop_assert!((u - v).abs() <= 1e-10 * m.max_abs());
            }
        }
    }
}
