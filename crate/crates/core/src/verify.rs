//! Invariant checks run against a configured problem: the suite behind the
//! `verify` command.

use std::fmt::Write;

use ndarray::array;
use rand::Rng;

use crate::algorithms::fednmap::CorrectionRule;
use crate::algorithms::{Executor, FedNMap, FederatedAlgorithm, LiveOracle, Scaffold};
use crate::error::Result;
use crate::maps::snapshot;
use crate::problems::Problem;
use crate::regularizers::Regularizer;
use crate::rng::{Domain, Lane, RngStream};
use crate::simulator::{BuiltRun, RunSpec};
use crate::vector::{norm, ordered_mean, ModelVector};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed violation, in the units of `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<26} {:<6} {:>12} {:>12}  {}\n",
            "check", "result", "worst", "tolerance", "detail"
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<26} {:<6} {:>12.3e} {:>12.1e}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.value,
                c.tolerance,
                c.detail
            );
        }
        s
    }
}

/// Knobs for [`verify`]; the defaults keep the suite to a few seconds.
#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub rounds: usize,
    pub sandwich_points: usize,
    pub prox_instances: usize,
    pub unbiased_draws: usize,
    /// Correction rule to exercise; anything but `Standard` is a deliberate fault.
    pub correction_rule: CorrectionRule,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            rounds: 20,
            sandwich_points: 200,
            prox_instances: 1000,
            unbiased_draws: 2000,
            correction_rule: CorrectionRule::Standard,
        }
    }
}

pub fn verify(spec: &RunSpec, opts: VerifyOptions) -> Result<VerifyReport> {
    let b = spec.build()?;
    let mut checks = tracking_checks(&b, opts)?;
    checks.push(sandwich_check(
        &b.problem,
        &b.reg,
        b.cfg.gamma,
        &b.z0,
        opts.sandwich_points,
        b.spec.seed,
    )?);
    checks.push(scaffold_check(&b, opts.rounds)?);
    checks.push(prox_check(&b.reg, opts.prox_instances, b.spec.seed));
    checks.push(unbiasedness_check(&b, opts.unbiased_draws)?);
    Ok(VerifyReport { checks })
}

fn tracking_checks(b: &BuiltRun, opts: VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut alg = FedNMap::new(b.reg, b.cfg, b.z0.clone())?.with_correction_rule(opts.correction_rule);
    let src = LiveOracle {
        problem: &b.problem,
        seed: b.spec.seed,
    };
    let exec = Executor::sequential();
    let (mut track, mut centred) = (0.0f64, 0.0f64);
    for _ in 0..opts.rounds {
        let r = alg.step(&src, &exec, false)?;
        let lhs = ordered_mean(&r.directions);
        let rhs = ordered_mean(&r.grad_means) + &((&r.z - &r.x) / b.cfg.gamma);
        let scale = 1.0 + norm(&lhs);
        track = track.max(norm(&(&lhs - &rhs)) / scale);
        let ys = r.directions.iter().map(norm).fold(1.0, f64::max);
        centred = centred.max(norm(&ordered_mean(&r.corrections)) / ys);
    }
    let detail = format!("{} rounds, n={}, Q={}", opts.rounds, b.cfg.n, b.cfg.q);
    Ok(vec![
        CheckResult {
            name: "tracking identity",
            passed: track <= 1e-12,
            value: track,
            tolerance: 1e-12,
            detail: detail.clone(),
        },
        CheckResult {
            name: "zero-mean corrections",
            passed: centred <= 1e-12,
            value: centred,
            tolerance: 1e-12,
            detail,
        },
    ])
}

/// `(1 - gamma rho) ||F_nat|| <= dist(0, d psi) <= ||F_nor||` at random points near `center`.
pub fn sandwich_check(
    prob: &Problem,
    reg: &Regularizer,
    gamma: f64,
    center: &ModelVector,
    points: usize,
    seed: u64,
) -> Result<CheckResult> {
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for k in 0..points {
        let mut rng = RngStream::new(seed, Domain::Harness, Lane::new(0, 1, k));
        let z = center + &ModelVector::from_iter((0..center.len()).map(|_| rng.standard_normal()));
        let s = snapshot(prob, reg, gamma, &z)?;
        let mid = s.subgrad_dist_sq.unwrap_or(f64::NAN).sqrt();
        let tol = 1e-10 * (1.0 + s.fnor_sq.sqrt());
        let lo = (1.0 - gamma * reg.rho()) * s.fnat_sq.sqrt() - mid;
        let hi = mid - s.fnor_sq.sqrt();
        let gap = lo.max(hi);
        if !(gap <= tol) {
            violations += 1;
        }
        worst = worst.max(gap);
    }
    Ok(CheckResult {
        name: "sandwich inequality",
        passed: violations == 0,
        value: worst.max(0.0),
        tolerance: 1e-10,
        detail: format!("{violations} violations over {points} points"),
    })
}

fn scaffold_check(b: &BuiltRun, rounds: usize) -> Result<CheckResult> {
    let zero = Regularizer::zero();
    let mut f = FedNMap::new(zero, b.cfg, b.z0.clone())?;
    let mut s = Scaffold::new(zero, b.cfg, b.z0.clone())?;
    let src = LiveOracle {
        problem: &b.problem,
        seed: b.spec.seed,
    };
    let exec = Executor::sequential();
    let mut worst = 0.0f64;
    for _ in 0..rounds {
        f.step(&src, &exec, false)?;
        s.step(&src, &exec, false)?;
        worst = worst.max(norm(&(f.x() - s.x())) / (1.0 + norm(f.x())));
    }
    Ok(CheckResult {
        name: "scaffold equivalence",
        passed: worst <= 1e-10,
        value: worst,
        tolerance: 1e-10,
        detail: format!("phi = 0, {rounds} rounds"),
    })
}

/// Scalar `phi` value, `+inf` outside the domain.
fn phi_scalar(reg: &Regularizer, y: f64) -> f64 {
    reg.value(&array![y]).finite().unwrap_or(f64::INFINITY)
}

/// Minimizes `phi(y) + (y - v)^2 / (2 gamma)` by a grid scan followed by
/// golden-section refinement, without using the closed form.
pub fn brute_force_prox(reg: &Regularizer, gamma: f64, v: f64) -> f64 {
    let obj = |y: f64| phi_scalar(reg, y) + (y - v) * (y - v) / (2.0 * gamma);
    // The minimizer lies between 0 and v, or inside the box, padded by 1.
    let (mut lo, mut hi) = (v.min(0.0) - 1.0, v.max(0.0) + 1.0);
    if let crate::RegularizerKind::BoxIndicator { lo: a, hi: b } = reg.kind() {
        lo = lo.min(a).max(a);
        hi = hi.max(b).min(b);
    }
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let mut best = (obj(lo), lo);
    for k in 1..=steps {
        let y = lo + h * k as f64;
        let f = obj(y);
        if f < best.0 {
            best = (f, y);
        }
    }
    let (mut a, mut b) = ((best.1 - h).max(lo), (best.1 + h).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-13 * (1.0 + a.abs().max(b.abs())) {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if obj(c) <= obj(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let mid = 0.5 * (a + b);
    // grid endpoints can beat the refined point when the optimum sits on a bound
    [mid, best.1, lo, hi]
        .into_iter()
        .fold(mid, |m, y| if obj(y) < obj(m) { y } else { m })
}

/// Closed-form proxes against [`brute_force_prox`] on random scalars, for the
/// configured regularizer and one random instance of every built-in kind.
pub fn prox_check(reg: &Regularizer, instances: usize, seed: u64) -> CheckResult {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut rng = RngStream::new(seed, Domain::Harness, Lane::new(0, 2, k));
        let r = match k % 4 {
            0 => *reg,
            1 => Regularizer::l1(rng.random_range(0.0..2.0)).unwrap(),
            2 => Regularizer::elastic_net(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)).unwrap(),
            _ => {
                let a: f64 = rng.random_range(-2.0..1.0);
                Regularizer::box_indicator(a, a + rng.random_range(0.0..2.0)).unwrap()
            }
        };
        let gamma = rng.random_range(0.05..3.0);
        let v = rng.random_range(-5.0..5.0);
        worst = worst.max((r.prox_scalar(gamma, v) - brute_force_prox(&r, gamma, v)).abs());
    }
    CheckResult {
        name: "prox oracles",
        passed: worst <= 1e-6,
        value: worst,
        tolerance: 1e-6,
        detail: format!("{instances} scalar instances"),
    }
}

/// Monte Carlo check that `g_i(x; xi) + (z - x) / gamma`, with `i` uniform,
/// is unbiased for `F_nor(z)`. Each coordinate must lie within `k` standard
/// errors, `k = max(4, 2 + sqrt(2 ln p))` to account for testing `p` coordinates.
pub fn unbiasedness_check_at(
    prob: &Problem,
    reg: &Regularizer,
    gamma: f64,
    z: &ModelVector,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let p = z.len();
    let x = reg.prox(gamma, z)?;
    let shift = (z - &x) / gamma;
    let exact = prob.gradient(&x)? + &shift;
    let n = prob.num_clients();
    let mut sum = ModelVector::zeros(p);
    let mut sum_sq = ModelVector::zeros(p);
    for k in 0..draws {
        let mut pick = RngStream::new(seed, Domain::Harness, Lane::new(0, 3, k));
        let i = pick.random_range(0..n);
        let mut rng = RngStream::new(seed, Domain::Harness, Lane::new(i, 4, k));
        let d = prob.stochastic_gradient(i, &x, &mut rng)? + &shift;
        sum_sq += &d.mapv(|v| v * v);
        sum += &d;
    }
    let m = draws as f64;
    let mean = &sum / m;
    let mut worst = 0.0f64;
    for j in 0..p {
        let var = ((sum_sq[j] - m * mean[j] * mean[j]) / (m - 1.0)).max(0.0);
        let se = (var / m).sqrt();
        let dev = (mean[j] - exact[j]).abs();
        let tol = 1e-12 * (1.0 + exact[j].abs());
        let score = if dev <= tol {
            0.0
        } else if se > 0.0 {
            dev / se
        } else {
            f64::INFINITY
        };
        worst = worst.max(score);
    }
    let k = 4.0f64.max(2.0 + (2.0 * (p as f64).ln()).sqrt());
    Ok((worst, k))
}

fn unbiasedness_check(b: &BuiltRun, draws: usize) -> Result<CheckResult> {
    let (worst, k) = unbiasedness_check_at(&b.problem, &b.reg, b.cfg.gamma, &b.z0, draws.max(2), b.spec.seed)?;
    Ok(CheckResult {
        name: "unbiased normal map",
        passed: worst <= k,
        value: worst,
        tolerance: k,
        detail: format!("{draws} draws, max |mean - F_nor| in standard errors"),
    })
}
