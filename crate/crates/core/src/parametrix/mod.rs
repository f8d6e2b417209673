//! Parametrix representation of the backward equation
//!
//! ```text
//! ∂_t u + 𝓛u + φ = 0 on [0, T) × R^{2d},   u(T, ·) = 0
//! ```
//!
//! Freezing the coefficients along the transport started at `(t, ξ)` gives
//! `u(t, x) = ∫_t^T ∫ [φ + (𝓛 - 𝓛̃)u](s, y) q̃(t, x; s, y) dy ds`, which is
//! iterated to a fixed point on a grid.

mod diagnostics;
mod fields;
mod grid;
mod integrands;
mod representation;
mod solver;

use std::sync::Arc;

use serde::Serialize;

pub use diagnostics::{derivative_diagnostics, DiagnosticsReport};
pub use fields::{FieldSample, FromDerivatives, SolutionFields, ZeroFields};
pub use grid::{AxisSpec, GridSolution, GridSpec};
pub use integrands::{centering_check, integrand_terms, CenteringVariant, IntegrandTerms};
pub use representation::{
    feynman_kac_first_term, representation_derivative, representation_rhs, representation_rhs_frozen_at,
    McEstimate,
};
pub use solver::{
    fixed_point_residual, manufactured_solution, manufactured_source, pde_residual, picard_solve,
    PdeResidual, PicardOutcome, PicardReport,
};

use crate::transport::OdeGridConfig;
use crate::{Error, Result};

/// Scalar source term `φ(s, y)`.
pub type Source = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

pub fn source<F>(f: F) -> Source
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(f)
}

/// `sign(y2)|y2|^β · exp(-|y|²/4)`, summed over the second block.
pub fn holder_source(beta: f64) -> Source {
    source(move |_, y| {
        let d = y.len() / 2;
        let r2: f64 = y.iter().map(|v| v * v).sum();
        let g: f64 = y[d..].iter().map(|v| v.signum() * v.abs().powf(beta)).sum();
        g * (-0.25 * r2).exp()
    })
}

/// Which perturbation operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DeltaKind {
    /// `f(s, y) - f(s, ζ)`
    Full,
    /// `f(s, y1, ζ2) - f(s, ζ1, ζ2)`
    First,
    /// `f(s, y1, y2) - f(s, y1, ζ2)`
    Second,
}

/// Applies a perturbation operator around `zeta` to `f` at `(s, y)`.
pub fn delta_apply(kind: DeltaKind, zeta: &[f64], f: impl Fn(f64, &[f64]) -> f64, s: f64, y: &[f64]) -> f64 {
    let d = y.len() / 2;
    let mixed = || -> Vec<f64> { y[..d].iter().chain(&zeta[d..]).copied().collect() };
    match kind {
        DeltaKind::Full => f(s, y) - f(s, zeta),
        DeltaKind::First => f(s, &mixed()) - f(s, zeta),
        DeltaKind::Second => f(s, y) - f(s, &mixed()),
    }
}

/// Time and space quadrature used by one representation evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureSpec {
    /// Geometric panels on `[t, T]`, shrinking toward `t`.
    pub time_panels: usize,
    pub time_ratio: f64,
    pub time_nodes_per_panel: usize,
    /// Gauss–Legendre panels per whitened axis on `[-radius, radius]`.
    pub space_panels: usize,
    pub space_nodes_per_panel: usize,
    pub space_radius: f64,
    /// Largest number of space-time points one evaluation may use.
    pub budget: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            time_panels: 24,
            time_ratio: 0.5,
            time_nodes_per_panel: 2,
            space_panels: 4,
            space_nodes_per_panel: 6,
            space_radius: 8.0,
            budget: 1 << 22,
        }
    }
}

impl QuadratureSpec {
    pub fn space_nodes_per_axis(&self) -> usize {
        self.space_panels * self.space_nodes_per_panel
    }

    pub fn time_nodes(&self) -> usize {
        self.time_panels * self.time_nodes_per_panel
    }

    fn validate(&self) -> Result<()> {
        if self.time_panels == 0
            || self.time_nodes_per_panel == 0
            || self.space_panels == 0
            || self.space_nodes_per_panel == 0
        {
            return Err(Error::InvalidArgument("quadrature needs at least one panel and node".into()));
        }
        if !(self.time_ratio > 0.0 && self.time_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("time ratio {} must lie in (0, 1)", self.time_ratio)));
        }
        if !(self.space_radius > 0.0) {
            return Err(Error::InvalidArgument("space radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardConfig {
    pub max_iterations: usize,
    /// Stop once the sup-grid change falls below this.
    pub tolerance: f64,
    pub quad: QuadratureSpec,
    pub ode: OdeGridConfig,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { max_iterations: 40, tolerance: 1e-6, quad: QuadratureSpec::default(), ode: OdeGridConfig::default() }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("at least one Picard iteration is required".into()));
        }
        self.quad.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wobble(s: f64, y: &[f64]) -> f64 {
        (y[0] * 1.3 + s).sin() * y[1].cos() + y[1].powi(3)
    }

    #[test]
    fn delta_vanishes_at_zeta() {
        let z = [0.3, -0.2];
        assert_eq!(delta_apply(DeltaKind::Full, &z, wobble, 0.4, &z), 0.0);
        assert_eq!(delta_apply(DeltaKind::First, &z, wobble, 0.4, &z), 0.0);
        assert_eq!(delta_apply(DeltaKind::Second, &z, wobble, 0.4, &z), 0.0);
    }

    #[test]
    fn second_delta_of_coordinate() {
        let z = [0.3, -0.2];
        let y = [1.1, 0.9];
        let v = delta_apply(DeltaKind::Second, &z, |_, y| y[1], 0.0, &y);
        assert_eq!(v, y[1] - z[1]);
        let v = delta_apply(DeltaKind::First, &z, |_, y| y[0], 0.0, &y);
        assert_eq!(v, y[0] - z[0]);
    }

    proptest! {
        #[test]
        fn full_is_sum_of_parts(y0 in -3.0..3.0f64, y1 in -3.0..3.0f64, z0 in -3.0..3.0f64, z1 in -3.0..3.0f64, s in 0.0..1.0f64) {
            let y = [y0, y1];
            let z = [z0, z1];
            let full = delta_apply(DeltaKind::Full, &z, wobble, s, &y);
            let parts = delta_apply(DeltaKind::First, &z, wobble, s, &y) + delta_apply(DeltaKind::Second, &z, wobble, s, &y);
            prop_assert!((full - parts).abs() <= 1e-14 * (1.0 + full.abs()));
        }
    }

    #[test]
    fn config_rejects_bad_tolerance() {
        let cfg = PicardConfig { tolerance: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(PicardConfig::default().validate().is_ok());
    }
}
