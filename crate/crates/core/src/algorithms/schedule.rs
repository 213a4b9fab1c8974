//! Stepsize schedules backed by the two convergence rate bounds.

use serde::Serialize;

use crate::error::{Error, Result};

/// Inputs for the nonconvex schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonconvexInputs {
    pub l: f64,
    pub rho: f64,
    pub sigma: f64,
    pub t: usize,
    pub n: usize,
    pub q: usize,
    pub delta_psi: f64,
    /// Largest acceptable `eta_s` before `eta_a` is pushed up to its bound.
    pub eta_s_cap: f64,
}

pub const DEFAULT_ETA_S_CAP: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NonconvexSchedule {
    pub gamma: f64,
    pub eta_hat: f64,
    pub eta_a: f64,
    pub eta_s: f64,
    pub m: usize,
    /// `sigma = 0`: the noise-free fallback was used.
    pub deterministic_fallback: bool,
    /// `eta_a` was raised to its premise bound because `eta_s` hit the cap.
    pub eta_a_rescaled: bool,
    pub eta_hat_bound: f64,
    pub eta_a_bound: f64,
    pub eta_hat_within_bound: bool,
    pub eta_a_within_bound: bool,
}

impl NonconvexSchedule {
    pub fn premises_hold(&self) -> bool {
        self.eta_hat_within_bound && self.eta_a_within_bound
    }

    /// Names of the premise bounds the schedule violates.
    pub fn violated_bounds(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.eta_hat_within_bound {
            v.push("eta_hat");
        }
        if !self.eta_a_within_bound {
            v.push("eta_a");
        }
        v
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

pub fn nonconvex_params(inp: NonconvexInputs) -> Result<NonconvexSchedule> {
    let NonconvexInputs {
        l,
        rho,
        sigma,
        t,
        n,
        q,
        delta_psi,
        eta_s_cap,
    } = inp;
    positive("L", l)?;
    positive("delta_psi", delta_psi)?;
    // an infinite cap disables the rescaling
    if !(eta_s_cap > 0.0) {
        return Err(Error::InvalidInput(format!(
            "eta_s cap must be positive, got {eta_s_cap}"
        )));
    }
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::InvalidInput(format!("rho must be non-negative, got {rho}")));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma must be non-negative, got {sigma}")));
    }
    if t == 0 || n == 0 || q == 0 {
        return Err(Error::InvalidInput("T, n and Q must be at least 1".into()));
    }
    let lr = l + rho;
    let (tf, nf, qf, s2) = (t as f64, n as f64, q as f64, sigma * sigma);
    let gamma = 1.0 / (5.0 * lr);
    let lip = (l * l + 1.0 / (gamma * gamma)).sqrt();
    let contraction = 1.0 - gamma * rho;

    let deterministic = sigma == 0.0;
    let (eta_hat, m) = if deterministic {
        (contraction / (100.0 * lip), 1usize)
    } else {
        let eta_hat = 1.0 / (320.0 * (s2 * tf * lr / (nf * qf * delta_psi)).sqrt());
        let m = (s2 * tf / (9.0 * lr * delta_psi * nf * qf)).sqrt().ceil().max(1.0) as usize;
        (eta_hat, m)
    };
    let mf = m as f64;
    let eta_hat_bound = contraction / (100.0 * mf * lip);
    let eta_a_bound = contraction / (100.0 * qf * (mf * lip * lip).sqrt());

    let mut eta_a = if deterministic {
        eta_a_bound
    } else {
        let a = 380.0 * (s2 * tf * qf.powi(3) * lr.powi(3) / (nf * delta_psi)).powf(0.25);
        let b = 240.0 * (lr * tf * qf * s2 / delta_psi).sqrt();
        1.0 / (a + b)
    };
    let mut eta_s = eta_hat / (eta_a * qf);
    let mut eta_a_rescaled = false;
    if eta_s > eta_s_cap && eta_a < eta_a_bound {
        eta_a = eta_a_bound;
        eta_s = eta_hat / (eta_a * qf);
        eta_a_rescaled = true;
    }

    Ok(NonconvexSchedule {
        gamma,
        eta_hat,
        eta_a,
        eta_s,
        m,
        deterministic_fallback: deterministic,
        eta_a_rescaled,
        eta_hat_bound,
        eta_a_bound,
        eta_hat_within_bound: eta_hat <= eta_hat_bound,
        eta_a_within_bound: eta_a <= eta_a_bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlSchedule {
    pub gamma: f64,
    pub eta_a: f64,
    pub eta_s: f64,
    pub m: usize,
    pub eta_hat: f64,
    /// `nQT = 1` makes the logarithm, and hence every stepsize, zero.
    pub degenerate: bool,
}

/// Schedule under the proximal PL condition with constant `mu`.
pub fn pl_params(l: f64, rho: f64, mu: f64, n: usize, q: usize, t: usize, eta_s: f64) -> Result<PlSchedule> {
    positive("mu", mu)?;
    positive("L", l)?;
    positive("eta_s", eta_s)?;
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::InvalidInput(format!("rho must be non-negative, got {rho}")));
    }
    if t == 0 || n == 0 || q == 0 {
        return Err(Error::InvalidInput("T, n and Q must be at least 1".into()));
    }
    let (nf, qf, tf) = (n as f64, q as f64, t as f64);
    let gamma = 1.0 / (5.0 * (mu + l + rho));
    let eta_a = (nf * qf * tf).ln() / (120.0 * qf * (l + rho + mu) * tf);
    let m = (mu * tf / (l + rho)).ceil() as usize;
    Ok(PlSchedule {
        gamma,
        eta_a,
        eta_s,
        m,
        eta_hat: eta_a * eta_s * qf,
        degenerate: eta_a == 0.0,
    })
}
