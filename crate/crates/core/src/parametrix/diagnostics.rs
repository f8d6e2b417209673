//! Sup-norms of the derivative fields and the Hölder modulus of `D2u`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::grid::GridSolution;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub sup_d1u: f64,
    pub sup_d2u: f64,
    pub sup_d11u: f64,
    pub sup_d12u: f64,
    /// `M(D2u, T)`: largest sampled quotient of `|D2u(t, w1, w2) - D2u(t, w1, w2')|`
    /// by `|δ|^{γ/3} + |δ|^{β2²} + |δ|^{β1²} + |δ|`, `δ = w2 - w2'`.
    pub holder_modulus: f64,
    pub gamma: f64,
    pub pairs: usize,
    pub seed: u64,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Every pair is visited when `pair_samples` is zero or covers them all;
/// otherwise `pair_samples` pairs are drawn from `seed`.
pub fn derivative_diagnostics(sol: &GridSolution, gamma: f64, pair_samples: usize, seed: u64) -> Result<DiagnosticsReport> {
    let b12 = sol.holder.beta12;
    let b22 = sol.holder.beta22;
    let upper = 3.0 * b12.min(b22) - 1.0;
    if !(gamma > 0.0 && gamma < upper) {
        return Err(Error::InvalidGamma { gamma, upper });
    }
    let nt = sol.times.len();
    let (n1, n2) = (sol.x1.len(), sol.x2.len());
    let quotient = |k: usize, i: usize, j: usize, jp: usize| {
        let delta = (sol.x2[j] - sol.x2[jp]).abs();
        let den = delta.powf(gamma / 3.0) + delta.powf(b22) + delta.powf(b12) + delta;
        let num = (sol.d2[sol.index(k, i, j)] - sol.d2[sol.index(k, i, jp)]).abs();
        num / den
    };
    let total = nt * n1 * n2 * (n2 - 1) / 2;
    let mut m = 0.0f64;
    let pairs = if pair_samples == 0 || pair_samples >= total {
        for k in 0..nt {
            for i in 0..n1 {
                for j in 0..n2 {
                    for jp in j + 1..n2 {
                        m = m.max(quotient(k, i, j, jp));
                    }
                }
            }
        }
        total
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..pair_samples {
            let k = rng.random_range(0..nt);
            let i = rng.random_range(0..n1);
            let j = rng.random_range(0..n2);
            let mut jp = rng.random_range(0..n2 - 1);
            if jp >= j {
                jp += 1;
            }
            m = m.max(quotient(k, i, j, jp));
        }
        pair_samples
    };
    Ok(DiagnosticsReport {
        sup_d1u: sup(&sol.d1),
        sup_d2u: sup(&sol.d2),
        sup_d11u: sup(&sol.d11),
        sup_d12u: sup(&sol.d12),
        holder_modulus: m,
        gamma,
        pairs,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::HolderExponents;
    use crate::parametrix::GridSpec;

    fn holder() -> HolderExponents {
        HolderExponents { beta11: 0.8, beta12: 0.8, beta22: 0.8, alpha1: 0.5 }
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let g = GridSolution::from_function(GridSpec::square(0.5, 2.0, 9, 8), holder(), |_, _| 0.0).unwrap();
        let r = derivative_diagnostics(&g, 0.3, 0, 1).unwrap();
        assert_eq!([r.sup_d1u, r.sup_d2u, r.sup_d11u, r.sup_d12u, r.holder_modulus], [0.0; 5]);
    }

    #[test]
    fn linear_in_second_coordinate() {
        let g = GridSolution::from_function(GridSpec::square(0.5, 2.0, 9, 8), holder(), |_, x| x[1]).unwrap();
        let r = derivative_diagnostics(&g, 0.3, 500, 4).unwrap();
        assert!((r.sup_d2u - 1.0).abs() < 1e-12);
        assert!(r.sup_d1u < 1e-12 && r.sup_d11u < 1e-12 && r.sup_d12u < 1e-12);
        assert!(r.holder_modulus < 1e-12);
    }

    #[test]
    fn gamma_range() {
        let g = GridSolution::from_function(GridSpec::square(0.5, 2.0, 5, 8), holder(), |_, _| 0.0).unwrap();
        assert!(matches!(derivative_diagnostics(&g, 1.41, 0, 1), Err(Error::InvalidGamma { .. })));
        assert!(matches!(derivative_diagnostics(&g, 0.0, 0, 1), Err(Error::InvalidGamma { .. })));
        assert!(derivative_diagnostics(&g, 1.39, 0, 1).is_ok());
    }

    #[test]
    fn sampled_modulus_is_bounded_by_exhaustive() {
        let g = GridSolution::from_function(GridSpec::square(0.5, 2.0, 9, 8), holder(), |t, x| {
            (0.5 - t) * x[1].abs().powf(1.8) * (-x[0] * x[0]).exp()
        })
        .unwrap();
        let full = derivative_diagnostics(&g, 0.3, 0, 1).unwrap();
        let part = derivative_diagnostics(&g, 0.3, 200, 9).unwrap();
        assert!(part.holder_modulus <= full.holder_modulus && full.holder_modulus > 0.0);
        assert_eq!(part, derivative_diagnostics(&g, 0.3, 200, 9).unwrap());
    }
}
