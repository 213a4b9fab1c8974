//! FedNMap: clients run corrected normal-map steps and upload one vector.

use serde::{Deserialize, Serialize};

use super::{Executor, FedConfig, FederatedAlgorithm, GradientSource, RoundReport, UplinkMessage};
use crate::error::{Error, Result};
use crate::regularizers::Regularizer;
use crate::rng::Lane;
use crate::vector::{check_dim, ordered_mean, ModelVector};

/// Per-client persistent state between rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    /// Correction used in the most recent round.
    pub c: ModelVector,
    /// Direction uploaded in the most recent round.
    pub y_last: Option<ModelVector>,
}

impl ClientState {
    pub fn new(p: usize) -> Self {
        ClientState {
            c: ModelVector::zeros(p),
            y_last: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub z: ModelVector,
    pub x: ModelVector,
    /// Mean of the previous round's uplinks; `None` before round 0 completes.
    pub y_bar_prev: Option<ModelVector>,
    pub round: usize,
}

impl ServerState {
    pub fn new(reg: &Regularizer, gamma: f64, z0: ModelVector) -> Result<Self> {
        let x = reg.prox(gamma, &z0)?;
        Ok(ServerState {
            z: z0,
            x,
            y_bar_prev: None,
            round: 0,
        })
    }
}

/// What the server broadcasts at the start of round `round`.
#[derive(Clone, Copy, Debug)]
pub struct Downlink<'a> {
    pub round: usize,
    pub z: &'a ModelVector,
    pub y_bar_prev: Option<&'a ModelVector>,
}

/// How clients refresh their correction. Only `Standard` is the real
/// protocol; the other variant exists so the verification harness can
/// show that it catches a broken update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrectionRule {
    #[default]
    Standard,
    /// `c_prev - y_prev - y_bar_prev`: the broadcast term enters with the wrong sign.
    FlippedBroadcast,
}

/// `c_{i,t}`: zero at `t = 0`, otherwise `c_prev - y_prev + y_bar_prev`.
pub fn correction_update(
    c_prev: &ModelVector,
    y_prev: &ModelVector,
    y_bar_prev: &ModelVector,
    t: usize,
) -> Result<ModelVector> {
    correction_with_rule(CorrectionRule::Standard, c_prev, y_prev, y_bar_prev, t)
}

fn correction_with_rule(
    rule: CorrectionRule,
    c_prev: &ModelVector,
    y_prev: &ModelVector,
    y_bar_prev: &ModelVector,
    t: usize,
) -> Result<ModelVector> {
    let p = c_prev.len();
    check_dim(y_prev, p)?;
    check_dim(y_bar_prev, p)?;
    if t == 0 {
        return Ok(ModelVector::zeros(p));
    }
    Ok(match rule {
        CorrectionRule::Standard => c_prev - y_prev + y_bar_prev,
        CorrectionRule::FlippedBroadcast => c_prev - y_prev - y_bar_prev,
    })
}

/// Output of one client's local phase.
#[derive(Clone, Debug)]
pub struct ClientRound {
    pub uplink: UplinkMessage,
    pub state: ClientState,
    /// `(1/Q) sum_l g^l`.
    pub grad_mean: ModelVector,
    pub draws: Option<Vec<ModelVector>>,
}

/// Local phase of client `i`: Q corrected normal-map steps from `z_t`.
pub fn fednmap_client_round(
    reg: &Regularizer,
    cfg: &FedConfig,
    i: usize,
    down: Downlink<'_>,
    prev: &ClientState,
    src: &dyn GradientSource,
    record: bool,
) -> Result<ClientRound> {
    client_round_with_rule(CorrectionRule::Standard, reg, cfg, i, down, prev, src, record)
}

#[allow(clippy::too_many_arguments)]
fn client_round_with_rule(
    rule: CorrectionRule,
    reg: &Regularizer,
    cfg: &FedConfig,
    i: usize,
    down: Downlink<'_>,
    prev: &ClientState,
    src: &dyn GradientSource,
    record: bool,
) -> Result<ClientRound> {
    let p = down.z.len();
    check_dim(&prev.c, p)?;
    let c = if down.round == 0 {
        ModelVector::zeros(p)
    } else {
        let (y_prev, y_bar) = match (&prev.y_last, down.y_bar_prev) {
            (Some(y), Some(b)) => (y, b),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "client {i}: round {} needs the previous uplink and broadcast",
                    down.round
                )))
            }
        };
        correction_with_rule(rule, &prev.c, y_prev, y_bar, down.round)?
    };

    let z_t = down.z;
    let x_t = reg.prox(cfg.gamma, z_t)?;
    // Drift of the prox step, fixed for the whole round.
    let shift = (z_t - &x_t) / cfg.gamma;
    let mut z = z_t.clone();
    let mut g_sum = ModelVector::zeros(p);
    let mut draws = record.then(|| Vec::with_capacity(cfg.q));
    for l in 0..cfg.q {
        let x_l = reg.prox(cfg.gamma, &z)?;
        let g = src.draw(Lane::new(i, down.round, l), &x_l)?;
        check_dim(&g, p)?;
        let dir = &g + &shift + &c;
        z.scaled_add(-cfg.eta_a, &dir);
        g_sum += &g;
        if let Some(d) = draws.as_mut() {
            d.push(g);
        }
    }
    let y = (z_t - &z) / (cfg.eta_a * cfg.q as f64);
    Ok(ClientRound {
        state: ClientState {
            c,
            y_last: Some(y.clone()),
        },
        uplink: UplinkMessage { y },
        grad_mean: g_sum / cfg.q as f64,
        draws,
    })
}

/// Server aggregation: `z <- z - (Q eta_s eta_a / n) sum_i y_i`, `x <- prox(z)`.
pub fn fednmap_server_step(
    reg: &Regularizer,
    cfg: &FedConfig,
    state: &ServerState,
    uplinks: &[UplinkMessage],
) -> Result<ServerState> {
    if uplinks.len() != cfg.n {
        return Err(Error::MissingUplink {
            expected: cfg.n,
            got: uplinks.len(),
        });
    }
    let p = state.z.len();
    let ys: Vec<ModelVector> = uplinks.iter().map(|u| u.y.clone()).collect();
    for y in &ys {
        check_dim(y, p)?;
    }
    let y_bar = ordered_mean(&ys);
    let mut z = state.z.clone();
    z.scaled_add(-cfg.eta_hat(), &y_bar);
    let x = reg.prox(cfg.gamma, &z)?;
    Ok(ServerState {
        z,
        x,
        y_bar_prev: Some(y_bar),
        round: state.round + 1,
    })
}

/// Serializable snapshot of a whole FedNMap run at a round boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedNMapSnapshot {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

pub struct FedNMap {
    reg: Regularizer,
    cfg: FedConfig,
    server: ServerState,
    clients: Vec<ClientState>,
    rule: CorrectionRule,
}

impl FedNMap {
    pub fn new(reg: Regularizer, cfg: FedConfig, z0: ModelVector) -> Result<Self> {
        cfg.validate(&reg)?;
        let p = z0.len();
        let server = ServerState::new(&reg, cfg.gamma, z0)?;
        Ok(FedNMap {
            reg,
            cfg,
            server,
            clients: vec![ClientState::new(p); cfg.n],
            rule: CorrectionRule::Standard,
        })
    }

    pub fn with_correction_rule(mut self, rule: CorrectionRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn config(&self) -> &FedConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn snapshot(&self) -> FedNMapSnapshot {
        FedNMapSnapshot {
            server: self.server.clone(),
            clients: self.clients.clone(),
        }
    }

    pub fn restore(reg: Regularizer, cfg: FedConfig, snap: FedNMapSnapshot) -> Result<Self> {
        cfg.validate(&reg)?;
        if snap.clients.len() != cfg.n {
            return Err(Error::InvalidInput(format!(
                "snapshot has {} clients, config has {}",
                snap.clients.len(),
                cfg.n
            )));
        }
        Ok(FedNMap {
            reg,
            cfg,
            server: snap.server,
            clients: snap.clients,
            rule: CorrectionRule::Standard,
        })
    }
}

impl FederatedAlgorithm for FedNMap {
    fn name(&self) -> &'static str {
        "fednmap"
    }

    fn round(&self) -> usize {
        self.server.round
    }

    fn z(&self) -> &ModelVector {
        &self.server.z
    }

    fn x(&self) -> &ModelVector {
        &self.server.x
    }

    fn map_gamma(&self) -> f64 {
        self.cfg.gamma
    }

    fn uplink_bytes_per_round(&self) -> usize {
        self.cfg.n * self.server.z.len() * std::mem::size_of::<f64>()
    }

    fn step(&mut self, src: &dyn GradientSource, exec: &Executor, record: bool) -> Result<RoundReport> {
        let down = Downlink {
            round: self.server.round,
            z: &self.server.z,
            y_bar_prev: self.server.y_bar_prev.as_ref(),
        };
        let (reg, cfg, rule, clients) = (&self.reg, &self.cfg, self.rule, &self.clients);
        let outs = exec.map_clients(cfg.n, |i| {
            client_round_with_rule(rule, reg, cfg, i, down, &clients[i], src, record)
        })?;
        let uplinks: Vec<UplinkMessage> = outs.iter().map(|o| o.uplink.clone()).collect();
        let next = fednmap_server_step(&self.reg, &self.cfg, &self.server, &uplinks)?;
        let mut report = RoundReport {
            round: self.server.round,
            z: self.server.z.clone(),
            x: self.server.x.clone(),
            uplink_bytes: uplinks.iter().map(UplinkMessage::byte_count).sum(),
            draws: record.then(Vec::new),
            ..Default::default()
        };
        self.clients.clear();
        for o in outs {
            report.directions.push(o.uplink.y);
            report.grad_means.push(o.grad_mean);
            report.corrections.push(o.state.c.clone());
            if let (Some(all), Some(d)) = (report.draws.as_mut(), o.draws) {
                all.push(d);
            }
            self.clients.push(o.state);
        }
        self.server = next;
        Ok(report)
    }
}
