//! Pass/fail thresholds of the experiments, overridable by key.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::{Error, Result};

/// `(key, default, meaning)`.
pub const DEFAULTS: &[(&str, f64, &str)] = &[
    ("kolmogorov.hist_l1", 0.05, "L1 distance between histogram and exact bin masses"),
    ("kolmogorov.density_rel", 1e-6, "relative error of the frozen density against the closed form"),
    ("kolmogorov.cov_rel", 0.03, "relative covariance error on top of the Euler bias"),
    ("kolmogorov.sigma_abs", 1e-9, "assembled covariance against the closed form"),
    ("scaling.slope_abs", 0.05, "derivative exponent regression"),
    ("scaling.block_slope_abs", 0.05, "inverse covariance block regression"),
    ("scaling.symmetry_rel", 1e-10, "|D_x2 q + D_y2 q| / max |D_x2 q|"),
    ("scaling.symmetry_integral", 1e-6, "|∫ D_x2 q dy2|"),
    ("scaling.residual_rel", 1e-3, "backward equation residual of the frozen density"),
    ("uniqueness.lipschitz_log2_ratio", 0.5, "minimum log2 ratio between Lipschitz levels"),
    ("solve.picard_tol", 1e-6, "sup-change stopping tolerance"),
    ("solve.contraction_ratio", 0.5, "largest change ratio from the second iterate (T <= 0.1)"),
    ("solve.fixed_point_factor", 2.0, "fixed-point residual in units of picard_tol"),
    ("solve.manufactured_rel", 0.02, "max grid error relative to max |u*|"),
    ("solve.pde_residual_rel", 0.05, "PDE residual relative to max |φ|"),
    ("mollify.slope_abs", 0.15, "deviation of the sup-error slope from -β"),
    ("mollify.sup_slack", 1e-9, "allowed growth of the sup-norm under mollification"),
    ("centering.residual", 1e-3, "centering identity residual"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Tolerances(BTreeMap<String, f64>);

impl Default for Tolerances {
    fn default() -> Self {
        Self(DEFAULTS.iter().map(|(k, v, _)| (k.to_string(), *v)).collect())
    }
}

impl Tolerances {
    /// Panics on keys missing from [`DEFAULTS`].
    pub fn get(&self, key: &str) -> f64 {
        *self.0.get(key).unwrap_or_else(|| panic!("unknown tolerance {key}"))
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {key} must be positive, got {value}")));
        }
        match self.0.get_mut(key) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!("unknown tolerance {key}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {spec}")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("not a number: {v}")))?;
        self.set(k.trim(), value)
    }

    /// The entries whose key starts with `prefix.`.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, f64> {
        let p = format!("{prefix}.");
        self.0.iter().filter(|(k, _)| k.starts_with(&p)).map(|(k, v)| (k.clone(), *v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_and_reject() {
        let mut t = Tolerances::default();
        assert_eq!(t.get("mollify.slope_abs"), 0.15);
        t.apply("mollify.slope_abs=0.2").unwrap();
        assert_eq!(t.get("mollify.slope_abs"), 0.2);
        assert!(t.apply("nope=1").is_err());
        assert!(t.apply("mollify.slope_abs").is_err());
        assert!(t.apply("mollify.slope_abs=-1").is_err());
        assert_eq!(t.section("centering").len(), 1);
    }
}
