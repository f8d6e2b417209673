//! Derivative fields of the current iterate, sampled off-grid.

use crate::kernel::DerivativeFields;

/// `u`, `D1u`, `D2u` and `D²_1u` at one point. `available` flags which of
/// `D1u`, `D2u`, `D²_1u` the source could supply.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub u: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// Row-major `d×d`.
    pub d11: Vec<f64>,
    pub available: [bool; 3],
}

impl FieldSample {
    pub fn new(dim: usize) -> Self {
        Self { u: 0.0, d1: vec![0.0; dim], d2: vec![0.0; dim], d11: vec![0.0; dim * dim], available: [true; 3] }
    }
}

/// Anything that can report the derivatives used by the integrands.
pub trait SolutionFields: Sync {
    fn dim(&self) -> usize;
    fn sample_into(&self, s: f64, y: &[f64], out: &mut FieldSample);
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroFields {
    pub dim: usize,
}

impl SolutionFields for ZeroFields {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, _s: f64, _y: &[f64], out: &mut FieldSample) {
        out.u = 0.0;
        out.d1.fill(0.0);
        out.d2.fill(0.0);
        out.d11.fill(0.0);
        out.available = [true; 3];
    }
}

/// Adapts a [`DerivativeFields`] implementation. Missing fields are flagged
/// rather than reported, since a term whose coefficient vanishes never
/// needs them.
pub struct FromDerivatives<T> {
    pub inner: T,
    pub dim: usize,
}

impl<T: DerivativeFields + Sync> SolutionFields for FromDerivatives<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample_into(&self, s: f64, y: &[f64], out: &mut FieldSample) {
        out.u = 0.0;
        let fill = |r: crate::Result<Vec<f64>>, dst: &mut Vec<f64>| match r {
            Ok(v) if v.len() == dst.len() => {
                dst.copy_from_slice(&v);
                true
            }
            _ => false,
        };
        out.available[0] = fill(self.inner.grad_x1(s, y), &mut out.d1);
        out.available[1] = fill(self.inner.grad_x2(s, y), &mut out.d2);
        out.available[2] = fill(self.inner.hess_x1(s, y), &mut out.d11);
    }
}
