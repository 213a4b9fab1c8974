//! Nonsmooth terms `phi` with closed-form proximal operators.
//!
//! All built-in kinds are separable and convex (`rho = 0`). The modulus is
//! still carried on [`Regularizer`] so that prox-parameter validity
//! (`gamma * rho < 1`) is checked the same way for every kind.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::ModelVector;

pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegularizerKind {
    Zero,
    /// `nu * ||x||_1`
    L1 {
        nu: f64,
    },
    /// `nu1 * ||x||_1 + nu2 * ||x||_2^2`
    ElasticNet {
        nu1: f64,
        nu2: f64,
    },
    /// Indicator of the box `[lo, hi]^p`.
    BoxIndicator {
        lo: f64,
        hi: f64,
    },
}

impl RegularizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegularizerKind::Zero => "zero",
            RegularizerKind::L1 { .. } => "l1",
            RegularizerKind::ElasticNet { .. } => "elastic_net",
            RegularizerKind::BoxIndicator { .. } => "box",
        }
    }
}

/// Value of `phi`, which may be `+inf` for indicators. Kept as its own type
/// so an infeasible point can never leak into float arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhiValue {
    Finite(f64),
    Infinite,
}

impl PhiValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            PhiValue::Finite(v) => Some(v),
            PhiValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, PhiValue::Infinite)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularizer {
    kind: RegularizerKind,
    rho: f64,
    feasibility_tol: f64,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    let a = v.abs();
    if a <= t {
        0.0
    } else {
        v.signum() * (a - t)
    }
}

impl Regularizer {
    pub fn new(kind: RegularizerKind) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidRegularizer(msg));
        match kind {
            RegularizerKind::Zero => {}
            RegularizerKind::L1 { nu } => {
                if !(nu >= 0.0 && nu.is_finite()) {
                    return bad(format!("l1 weight must be finite and nonnegative, got {nu}"));
                }
            }
            RegularizerKind::ElasticNet { nu1, nu2 } => {
                if !(nu1 >= 0.0 && nu1.is_finite() && nu2 >= 0.0 && nu2.is_finite()) {
                    return bad(format!(
                        "elastic net weights must be finite and nonnegative, got ({nu1}, {nu2})"
                    ));
                }
            }
            RegularizerKind::BoxIndicator { lo, hi } => {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return bad(format!("box needs lo <= hi, got [{lo}, {hi}]"));
                }
            }
        }
        Ok(Regularizer {
            kind,
            rho: 0.0,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
        })
    }

    pub fn zero() -> Self {
        Regularizer {
            kind: RegularizerKind::Zero,
            rho: 0.0,
            feasibility_tol: DEFAULT_FEASIBILITY_TOL,
        }
    }

    pub fn l1(nu: f64) -> Result<Self> {
        Self::new(RegularizerKind::L1 { nu })
    }

    pub fn elastic_net(nu1: f64, nu2: f64) -> Result<Self> {
        Self::new(RegularizerKind::ElasticNet { nu1, nu2 })
    }

    pub fn box_indicator(lo: f64, hi: f64) -> Result<Self> {
        Self::new(RegularizerKind::BoxIndicator { lo, hi })
    }

    pub fn with_feasibility_tol(mut self, tol: f64) -> Self {
        self.feasibility_tol = tol;
        self
    }

    pub fn kind(&self) -> RegularizerKind {
        self.kind
    }

    /// Weak-convexity modulus.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, RegularizerKind::Zero)
    }

    pub fn check_gamma(&self, gamma: f64) -> Result<()> {
        if !(gamma > 0.0 && gamma.is_finite()) || gamma * self.rho >= 1.0 {
            return Err(Error::InvalidGamma { gamma, rho: self.rho });
        }
        Ok(())
    }

    /// Scalar prox without parameter validation.
    pub fn prox_scalar(&self, gamma: f64, v: f64) -> f64 {
        match self.kind {
            RegularizerKind::Zero => v,
            RegularizerKind::L1 { nu } => soft_threshold(v, gamma * nu),
            RegularizerKind::ElasticNet { nu1, nu2 } => soft_threshold(v, gamma * nu1) / (1.0 + 2.0 * gamma * nu2),
            RegularizerKind::BoxIndicator { lo, hi } => v.clamp(lo, hi),
        }
    }

    /// `argmin_y phi(y) + ||y - v||^2 / (2 gamma)`.
    pub fn prox(&self, gamma: f64, v: &ModelVector) -> Result<ModelVector> {
        self.check_gamma(gamma)?;
        if self.is_zero() {
            return Ok(v.clone());
        }
        Ok(v.mapv(|vj| self.prox_scalar(gamma, vj)))
    }

    pub fn value(&self, x: &ModelVector) -> PhiValue {
        match self.kind {
            RegularizerKind::Zero => PhiValue::Finite(0.0),
            RegularizerKind::L1 { nu } => PhiValue::Finite(nu * x.iter().map(|a| a.abs()).sum::<f64>()),
            RegularizerKind::ElasticNet { nu1, nu2 } => {
                let l1: f64 = x.iter().map(|a| a.abs()).sum();
                let l2: f64 = x.iter().map(|a| a * a).sum();
                PhiValue::Finite(nu1 * l1 + nu2 * l2)
            }
            RegularizerKind::BoxIndicator { lo, hi } => {
                let tol = self.feasibility_tol;
                if x.iter().all(|&a| a >= lo - tol && a <= hi + tol) {
                    PhiValue::Finite(0.0)
                } else {
                    PhiValue::Infinite
                }
            }
        }
    }

    /// Minimum-norm element of `grad_f + d phi(x)`, whose norm is
    /// `dist(0, d psi(x))` for `psi = f + phi`.
    pub fn min_norm_subgradient(&self, x: &ModelVector, grad_f: &ModelVector) -> Result<ModelVector> {
        crate::vector::check_dim(grad_f, x.len())?;
        let mut out = grad_f.clone();
        match self.kind {
            RegularizerKind::Zero => {}
            RegularizerKind::L1 { nu } => {
                for (r, &xj) in out.iter_mut().zip(x.iter()) {
                    *r = l1_residual(*r, xj, nu);
                }
            }
            RegularizerKind::ElasticNet { nu1, nu2 } => {
                for (r, &xj) in out.iter_mut().zip(x.iter()) {
                    *r = l1_residual(*r + 2.0 * nu2 * xj, xj, nu1);
                }
            }
            RegularizerKind::BoxIndicator { lo, hi } => {
                let tol = self.feasibility_tol;
                if x.iter().any(|&a| a < lo - tol || a > hi + tol) {
                    return Err(Error::InvalidInput(
                        "min_norm_subgradient needs a feasible point for a box indicator".into(),
                    ));
                }
                for (r, &xj) in out.iter_mut().zip(x.iter()) {
                    let at_lo = xj <= lo + tol;
                    let at_hi = xj >= hi - tol;
                    *r = match (at_lo, at_hi) {
                        (true, true) => 0.0,
                        (true, false) => r.min(0.0),
                        (false, true) => r.max(0.0),
                        (false, false) => *r,
                    };
                }
            }
        }
        Ok(out)
    }

    /// Coordinatewise check of `s ∈ d phi(x)` up to `tol`.
    pub fn contains_subgradient(&self, x: &ModelVector, s: &ModelVector, tol: f64) -> bool {
        if x.len() != s.len() {
            return false;
        }
        let l1_member = |xj: f64, sj: f64, nu: f64| {
            if xj == 0.0 {
                sj.abs() <= nu + tol
            } else {
                (sj - nu * xj.signum()).abs() <= tol
            }
        };
        x.iter().zip(s.iter()).all(|(&xj, &sj)| match self.kind {
            RegularizerKind::Zero => sj.abs() <= tol,
            RegularizerKind::L1 { nu } => l1_member(xj, sj, nu),
            RegularizerKind::ElasticNet { nu1, nu2 } => l1_member(xj, sj - 2.0 * nu2 * xj, nu1),
            RegularizerKind::BoxIndicator { lo, hi } => {
                let ft = self.feasibility_tol;
                if xj < lo - ft || xj > hi + ft {
                    return false;
                }
                let at_lo = xj <= lo + ft;
                let at_hi = xj >= hi - ft;
                match (at_lo, at_hi) {
                    (true, true) => true,
                    (true, false) => sj <= tol,
                    (false, true) => sj >= -tol,
                    (false, false) => sj.abs() <= tol,
                }
            }
        })
    }
}

// min over s in [-nu, nu] (x = 0) or s = nu*sign(x) of |d + s|
fn l1_residual(d: f64, xj: f64, nu: f64) -> f64 {
    if xj == 0.0 {
        d - d.clamp(-nu, nu)
    } else {
        d + nu * xj.signum()
    }
}
