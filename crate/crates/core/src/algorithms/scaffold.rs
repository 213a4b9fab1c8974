//! SCAFFOLD with option-II control variates, for smooth problems only.

use super::{Executor, FedConfig, FederatedAlgorithm, GradientSource, RoundReport, ScaffoldUplink};
use crate::error::{Error, Result};
use crate::regularizers::Regularizer;
use crate::rng::Lane;
use crate::vector::{check_dim, ordered_mean, ModelVector};

pub struct Scaffold {
    cfg: FedConfig,
    x: ModelVector,
    c: ModelVector,
    c_i: Vec<ModelVector>,
    round: usize,
}

impl Scaffold {
    /// All control variates start at zero.
    pub fn new(reg: Regularizer, cfg: FedConfig, x0: ModelVector) -> Result<Self> {
        if !reg.is_zero() {
            return Err(Error::UnsupportedKind("scaffold requires the zero regularizer"));
        }
        cfg.validate(&reg)?;
        let p = x0.len();
        Ok(Scaffold {
            cfg,
            x: x0,
            c: ModelVector::zeros(p),
            c_i: vec![ModelVector::zeros(p); cfg.n],
            round: 0,
        })
    }

    pub fn server_control(&self) -> &ModelVector {
        &self.c
    }

    pub fn client_controls(&self) -> &[ModelVector] {
        &self.c_i
    }
}

struct LocalOut {
    uplink: ScaffoldUplink,
    c_new: ModelVector,
    draws: Option<Vec<ModelVector>>,
}

#[allow(clippy::too_many_arguments)]
fn local(
    cfg: &FedConfig,
    i: usize,
    round: usize,
    x_t: &ModelVector,
    c: &ModelVector,
    c_i: &ModelVector,
    src: &dyn GradientSource,
    record: bool,
) -> Result<LocalOut> {
    let p = x_t.len();
    let drift = c - c_i;
    let mut x = x_t.clone();
    let mut g_sum = ModelVector::zeros(p);
    let mut draws = record.then(|| Vec::with_capacity(cfg.q));
    for l in 0..cfg.q {
        let g = src.draw(Lane::new(i, round, l), &x)?;
        check_dim(&g, p)?;
        x.scaled_add(-cfg.eta_a, &(&g + &drift));
        g_sum += &g;
        if let Some(d) = draws.as_mut() {
            d.push(g);
        }
    }
    let c_new = g_sum / cfg.q as f64;
    Ok(LocalOut {
        uplink: ScaffoldUplink {
            delta_x: &x - x_t,
            delta_c: &c_new - c_i,
        },
        c_new,
        draws,
    })
}

impl FederatedAlgorithm for Scaffold {
    fn name(&self) -> &'static str {
        "scaffold"
    }

    fn round(&self) -> usize {
        self.round
    }

    fn z(&self) -> &ModelVector {
        &self.x
    }

    fn x(&self) -> &ModelVector {
        &self.x
    }

    /// The prox of the zero regularizer is the identity, so any positive value works.
    fn map_gamma(&self) -> f64 {
        self.cfg.gamma
    }

    fn uplink_bytes_per_round(&self) -> usize {
        self.cfg.n * 2 * self.x.len() * std::mem::size_of::<f64>()
    }

    fn step(&mut self, src: &dyn GradientSource, exec: &Executor, record: bool) -> Result<RoundReport> {
        let (cfg, round, x_t, c, cis) = (&self.cfg, self.round, &self.x, &self.c, &self.c_i);
        let outs = exec.map_clients(cfg.n, |i| local(cfg, i, round, x_t, c, &cis[i], src, record))?;
        let dx: Vec<ModelVector> = outs.iter().map(|o| o.uplink.delta_x.clone()).collect();
        let dc: Vec<ModelVector> = outs.iter().map(|o| o.uplink.delta_c.clone()).collect();
        let mut report = RoundReport {
            round,
            z: self.x.clone(),
            x: self.x.clone(),
            corrections: self.c_i.iter().map(|ci| &self.c - ci).collect(),
            uplink_bytes: outs.iter().map(|o| o.uplink.byte_count()).sum(),
            draws: record.then(Vec::new),
            ..Default::default()
        };
        // Server: x += eta_s * mean(dx), c += mean(dc).
        self.x.scaled_add(self.cfg.eta_s, &ordered_mean(&dx));
        self.c += &ordered_mean(&dc);
        let scale = -1.0 / (self.cfg.eta_a * self.cfg.q as f64);
        for (i, o) in outs.into_iter().enumerate() {
            report.directions.push(&dx[i] * scale);
            report.grad_means.push(o.c_new.clone());
            if let (Some(all), Some(d)) = (report.draws.as_mut(), o.draws) {
                all.push(d);
            }
            self.c_i[i] = o.c_new;
        }
        self.round += 1;
        Ok(report)
    }
}
