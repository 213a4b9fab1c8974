//! Prox-tracking baseline: local proximal SGD with a prox parameter that
//! grows along the local trajectory, and a server prox with `eta_hat`.

use super::{Executor, FedConfig, FederatedAlgorithm, GradientSource, RoundReport, UplinkMessage};
use crate::error::Result;
use crate::regularizers::Regularizer;
use crate::rng::Lane;
use crate::vector::{check_dim, ordered_mean, ModelVector};

pub struct Zhang {
    reg: Regularizer,
    cfg: FedConfig,
    z: ModelVector,
    x: ModelVector,
    c: Vec<ModelVector>,
    round: usize,
}

impl Zhang {
    /// Starts from `x_0 = prox_{eta_hat}(z0)`.
    pub fn new(reg: Regularizer, cfg: FedConfig, z0: ModelVector) -> Result<Self> {
        cfg.validate(&reg)?;
        reg.check_gamma(cfg.eta_hat())?;
        let p = z0.len();
        let x = reg.prox(cfg.eta_hat(), &z0)?;
        Ok(Zhang {
            reg,
            cfg,
            z: z0,
            x,
            c: vec![ModelVector::zeros(p); cfg.n],
            round: 0,
        })
    }

    pub fn corrections(&self) -> &[ModelVector] {
        &self.c
    }
}

struct LocalOut {
    y: ModelVector,
    grad_mean: ModelVector,
    draws: Option<Vec<ModelVector>>,
}

fn local(
    reg: &Regularizer,
    cfg: &FedConfig,
    i: usize,
    round: usize,
    x_t: &ModelVector,
    c: &ModelVector,
    src: &dyn GradientSource,
    record: bool,
) -> Result<LocalOut> {
    let p = x_t.len();
    let mut z = x_t.clone();
    let mut x = x_t.clone();
    let mut g_sum = ModelVector::zeros(p);
    let mut draws = record.then(|| Vec::with_capacity(cfg.q));
    for l in 0..cfg.q {
        let g = src.draw(Lane::new(i, round, l), &x)?;
        check_dim(&g, p)?;
        z.scaled_add(-cfg.eta_a, &(&g + c));
        x = reg.prox((l + 1) as f64 * cfg.eta_a, &z)?;
        g_sum += &g;
        if let Some(d) = draws.as_mut() {
            d.push(g);
        }
    }
    Ok(LocalOut {
        y: (x_t - &z) / (cfg.eta_a * cfg.q as f64),
        grad_mean: g_sum / cfg.q as f64,
        draws,
    })
}

impl FederatedAlgorithm for Zhang {
    fn name(&self) -> &'static str {
        "zhang"
    }

    fn round(&self) -> usize {
        self.round
    }

    fn z(&self) -> &ModelVector {
        &self.z
    }

    fn x(&self) -> &ModelVector {
        &self.x
    }

    fn map_gamma(&self) -> f64 {
        self.cfg.eta_hat()
    }

    /// Each client uploads `z_{i,t}^Q`, one vector.
    fn uplink_bytes_per_round(&self) -> usize {
        self.cfg.n * self.z.len() * std::mem::size_of::<f64>()
    }

    fn step(&mut self, src: &dyn GradientSource, exec: &Executor, record: bool) -> Result<RoundReport> {
        let (reg, cfg, round, x_t, cs) = (&self.reg, &self.cfg, self.round, &self.x, &self.c);
        let outs = exec.map_clients(cfg.n, |i| local(reg, cfg, i, round, x_t, &cs[i], src, record))?;
        let ys: Vec<ModelVector> = outs.iter().map(|o| o.y.clone()).collect();
        let y_bar = ordered_mean(&ys);
        let eta_hat = self.cfg.eta_hat();
        let mut z_next = self.x.clone();
        z_next.scaled_add(-eta_hat, &y_bar);
        let x_next = self.reg.prox(eta_hat, &z_next)?;

        let mut report = RoundReport {
            round,
            z: self.z.clone(),
            x: self.x.clone(),
            corrections: self.c.clone(),
            uplink_bytes: ys.iter().map(|y| UplinkMessage { y: y.clone() }.byte_count()).sum(),
            draws: record.then(Vec::new),
            ..Default::default()
        };
        for (ci, y) in self.c.iter_mut().zip(&ys) {
            *ci = &*ci - y + &y_bar;
        }
        for o in outs {
            report.grad_means.push(o.grad_mean);
            if let (Some(all), Some(d)) = (report.draws.as_mut(), o.draws) {
                all.push(d);
            }
        }
        report.directions = ys;
        self.z = z_next;
        self.x = x_next;
        self.round += 1;
        Ok(report)
    }
}
