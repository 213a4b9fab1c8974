//! Stationarity measures for `psi = f + phi`: normal map, natural map, the
//! Lyapunov diagnostic, and a centralized reference solver.

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::regularizers::Regularizer;
use crate::vector::{norm, norm_sq, ModelVector};

/// `x = prox(z)` and `F_nor(z) = grad f(x) + (z - x) / gamma`.
pub fn normal_map(
    prob: &Problem,
    reg: &Regularizer,
    gamma: f64,
    z: &ModelVector,
) -> Result<(ModelVector, ModelVector)> {
    let x = reg.prox(gamma, z)?;
    let g = prob.gradient(&x)?;
    let fnor = g + &((z - &x) / gamma);
    Ok((x, fnor))
}

/// Per-client normal map, with `grad f_i` in place of `grad f`.
pub fn normal_map_i(
    prob: &Problem,
    reg: &Regularizer,
    gamma: f64,
    i: usize,
    z: &ModelVector,
) -> Result<(ModelVector, ModelVector)> {
    let x = reg.prox(gamma, z)?;
    let g = prob.full_gradient(i, &x)?;
    let fnor = g + &((z - &x) / gamma);
    Ok((x, fnor))
}

/// `F_nat(x) = (x - prox(x - gamma * grad)) / gamma` for a given gradient.
pub fn natural_map_from_grad(
    reg: &Regularizer,
    gamma: f64,
    x: &ModelVector,
    grad: &ModelVector,
) -> Result<ModelVector> {
    let inner = x - &(grad * gamma);
    let p = reg.prox(gamma, &inner)?;
    Ok((x - &p) / gamma)
}

pub fn natural_map(prob: &Problem, reg: &Regularizer, gamma: f64, x: &ModelVector) -> Result<ModelVector> {
    let g = prob.gradient(x)?;
    natural_map_from_grad(reg, gamma, x, &g)
}

/// `psi(x) = f(x) + phi(x)`; errors outside the domain of `phi`.
pub fn psi(prob: &Problem, reg: &Regularizer, x: &ModelVector) -> Result<f64> {
    let phi = reg
        .value(x)
        .finite()
        .ok_or_else(|| Error::InvalidInput("point lies outside dom(phi)".into()))?;
    Ok(prob.loss(x)? + phi)
}

/// Lyapunov weight `C_0 = (3 - 4 gamma rho) / (2 (3 - 4 gamma rho + 4 gamma^2 L^2))`.
pub fn c0(gamma: f64, rho: f64, l: f64) -> f64 {
    let a = 3.0 - 4.0 * gamma * rho;
    a / (2.0 * (a + 4.0 * gamma * gamma * l * l))
}

/// Whether `gamma <= 1 / (5 (rho + L))`, the range where `C_0 ∈ [4/9, 1/2)`.
pub fn gamma_in_lyapunov_range(gamma: f64, rho: f64, l: f64) -> bool {
    gamma * 5.0 * (rho + l) <= 1.0 + 1e-12
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lyapunov {
    pub value: f64,
    pub c0: f64,
    /// False when `gamma` is outside the range the weight was derived for;
    /// the value is still computed.
    pub gamma_in_range: bool,
}

/// `H(z) = psi(prox(z)) + (gamma C_0 / 2) ||F_nor(z)||^2`.
pub fn lyapunov(prob: &Problem, reg: &Regularizer, gamma: f64, z: &ModelVector) -> Result<Lyapunov> {
    let s = snapshot(prob, reg, gamma, z)?;
    let l = prob.l_bound();
    Ok(Lyapunov {
        value: s.lyapunov,
        c0: c0(gamma, reg.rho(), l),
        gamma_in_range: gamma_in_lyapunov_range(gamma, reg.rho(), l),
    })
}

/// All stationarity quantities at one point, from a single gradient call.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaritySnapshot {
    pub x: ModelVector,
    pub fnor_sq: f64,
    pub fnat_sq: f64,
    pub subgrad_dist_sq: Option<f64>,
    pub loss: f64,
    pub psi_value: f64,
    pub lyapunov: f64,
    pub gamma: f64,
}

impl StationaritySnapshot {
    /// `(1 - gamma rho) ||F_nat|| <= dist(0, d psi) <= ||F_nor||` up to `tol`.
    pub fn sandwich_holds(&self, rho: f64, tol: f64) -> bool {
        let Some(d) = self.subgrad_dist_sq else {
            return false;
        };
        let (nat, mid, nor) = (self.fnat_sq.sqrt(), d.sqrt(), self.fnor_sq.sqrt());
        (1.0 - self.gamma * rho) * nat <= mid + tol && mid <= nor + tol
    }
}

pub fn snapshot(prob: &Problem, reg: &Regularizer, gamma: f64, z: &ModelVector) -> Result<StationaritySnapshot> {
    snapshot_with(prob, reg, gamma, gamma, z)
}

/// Snapshot where `x = prox_{map_gamma}(z)` (the normal map the iterates
/// follow) while the natural map uses `nat_gamma`.
pub fn snapshot_with(
    prob: &Problem,
    reg: &Regularizer,
    nat_gamma: f64,
    map_gamma: f64,
    z: &ModelVector,
) -> Result<StationaritySnapshot> {
    let x = reg.prox(map_gamma, z)?;
    let (loss, grad) = prob.loss_and_gradient(&x)?;
    let fnor = &grad + &((z - &x) / map_gamma);
    let fnat = natural_map_from_grad(reg, nat_gamma, &x, &grad)?;
    let phi = reg
        .value(&x)
        .finite()
        .ok_or_else(|| Error::InvalidInput("prox output outside dom(phi)".into()))?;
    let subgrad = reg.min_norm_subgradient(&x, &grad).ok().map(|r| norm_sq(&r));
    let psi_value = loss + phi;
    let fnor_sq = norm_sq(&fnor);
    let c = c0(map_gamma, reg.rho(), prob.l_bound());
    Ok(StationaritySnapshot {
        x,
        fnor_sq,
        fnat_sq: norm_sq(&fnat),
        subgrad_dist_sq: subgrad,
        loss,
        psi_value,
        lyapunov: psi_value + 0.5 * map_gamma * c * fnor_sq,
        gamma: nat_gamma,
    })
}

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub z: ModelVector,
    pub x: ModelVector,
    /// `psi` at the normal-map iterate.
    pub psi_star: f64,
    pub converged: bool,
    pub iterations: usize,
    pub step: f64,
    /// `psi` reached by plain proximal gradient from `prox(z0)`.
    pub prox_grad_psi: f64,
    pub prox_grad_converged: bool,
}

impl ReferenceSolution {
    pub fn cross_check_gap(&self) -> f64 {
        (self.psi_star - self.prox_grad_psi).abs()
    }

    /// Both iterations converged and agree within `tol`.
    pub fn certified(&self, tol: f64) -> bool {
        self.converged && self.prox_grad_converged && self.cross_check_gap() <= tol
    }
}

/// Deterministic normal-map iteration `z <- z - eta F_nor(z)` with
/// `eta = min(gamma, 0.9 / L)`, stopped when `||F_nat(x)|| <= tol`, and
/// cross-checked against `x <- prox_{eta phi}(x - eta grad f(x))`.
/// Returns the last iterate with `converged = false` if `max_iter` is hit.
pub fn reference_solve(
    prob: &Problem,
    reg: &Regularizer,
    gamma: f64,
    z0: &ModelVector,
    tol: f64,
    max_iter: usize,
) -> Result<ReferenceSolution> {
    reg.check_gamma(gamma)?;
    let l = prob.l_bound();
    let eta = if l > 0.0 { gamma.min(0.9 / l) } else { gamma };

    let mut z = z0.clone();
    let mut converged = false;
    let mut iterations = max_iter;
    for k in 0..max_iter {
        let x = reg.prox(gamma, &z)?;
        let g = prob.gradient(&x)?;
        if norm(&natural_map_from_grad(reg, gamma, &x, &g)?) <= tol {
            converged = true;
            iterations = k;
            break;
        }
        let fnor = g + &((&z - &x) / gamma);
        z -= &(fnor * eta);
        if !crate::vector::is_finite(&z) {
            break;
        }
    }
    let x = reg.prox(gamma, &z)?;
    let psi_star = psi(prob, reg, &x)?;

    let mut xp = reg.prox(gamma, z0)?;
    let mut prox_grad_converged = false;
    for _ in 0..max_iter {
        let g = prob.gradient(&xp)?;
        if norm(&natural_map_from_grad(reg, gamma, &xp, &g)?) <= tol {
            prox_grad_converged = true;
            break;
        }
        xp = reg.prox(eta, &(&xp - &(g * eta)))?;
        if !crate::vector::is_finite(&xp) {
            break;
        }
    }
    let prox_grad_psi = psi(prob, reg, &xp)?;

    Ok(ReferenceSolution {
        z,
        x,
        psi_star,
        converged,
        iterations,
        step: eta,
        prox_grad_psi,
        prox_grad_converged,
    })
}
