//! Federated protocols: FedNMap and the two baselines it is compared with,
//! plus the parameter schedules prescribed by the convergence theory.

pub mod fednmap;
pub mod scaffold;
pub mod schedule;
pub mod zhang;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::regularizers::Regularizer;
use crate::rng::{Domain, Lane, RngStream};
use crate::vector::{check_dim, ModelVector};

pub use fednmap::{correction_update, fednmap_client_round, fednmap_server_step, FedNMap};
pub use scaffold::Scaffold;
pub use zhang::Zhang;

/// Round-level parameters shared by all three protocols.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// Number of clients (all participate every round).
    pub n: usize,
    /// Local steps per round.
    pub q: usize,
    /// Communication rounds.
    pub rounds: usize,
    pub eta_a: f64,
    pub eta_s: f64,
    pub gamma: f64,
}

impl FedConfig {
    /// Effective server stepsize `eta_a * eta_s * Q`.
    pub fn eta_hat(&self) -> f64 {
        self.eta_a * self.eta_s * self.q as f64
    }

    pub fn validate(&self, reg: &Regularizer) -> Result<()> {
        if self.n == 0 || self.q == 0 {
            return Err(Error::InvalidInput("need n >= 1 and Q >= 1".into()));
        }
        if !(self.eta_a > 0.0 && self.eta_a.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "eta_a must be positive, got {}",
                self.eta_a
            )));
        }
        if !(self.eta_s > 0.0 && self.eta_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "eta_s must be positive, got {}",
                self.eta_s
            )));
        }
        reg.check_gamma(self.gamma)
    }
}

/// Source of stochastic gradients `g_i(x; xi)` addressed by lane.
pub trait GradientSource: Sync {
    fn draw(&self, lane: Lane, x: &ModelVector) -> Result<ModelVector>;
}

/// Live oracle: one counter-based stream per `(client, round, step)`.
pub struct LiveOracle<'a> {
    pub problem: &'a Problem,
    pub seed: u64,
}

impl GradientSource for LiveOracle<'_> {
    fn draw(&self, lane: Lane, x: &ModelVector) -> Result<ModelVector> {
        let mut rng = RngStream::new(self.seed, Domain::Gradient, lane);
        self.problem.stochastic_gradient(lane.client as usize, x, &mut rng)
    }
}

/// Gradient draws keyed by lane, filled from recorded rounds and served
/// back verbatim for replay.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DrawTable {
    draws: BTreeMap<Lane, ModelVector>,
}

impl DrawTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lane: Lane, g: ModelVector) {
        self.draws.insert(lane, g);
    }

    /// Adds every draw a recorded round consumed.
    pub fn absorb(&mut self, report: &RoundReport) -> Result<()> {
        let draws = report
            .draws
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("round was not recorded".into()))?;
        for (i, per_client) in draws.iter().enumerate() {
            for (l, g) in per_client.iter().enumerate() {
                self.insert(Lane::new(i, report.round, l), g.clone());
            }
        }
        Ok(())
    }

    pub fn get(&self, lane: &Lane) -> Option<&ModelVector> {
        self.draws.get(lane)
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Entries in `(round, client, step)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&Lane, &ModelVector)> {
        self.draws.iter()
    }
}

impl GradientSource for DrawTable {
    fn draw(&self, lane: Lane, x: &ModelVector) -> Result<ModelVector> {
        let g = self.draws.get(&lane).ok_or_else(|| {
            Error::DrawScheduleMismatch(format!(
                "no recorded draw for round {} client {} step {}",
                lane.round, lane.client, lane.step
            ))
        })?;
        check_dim(g, x.len())?;
        Ok(g.clone())
    }
}

/// Runs the per-client part of a round either inline or on a thread pool.
/// Results always come back in client order.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn sequential() -> Self {
        Executor { pool: None }
    }

    pub fn with_workers(workers: usize) -> Result<Self> {
        if workers <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
        Ok(Executor { pool: Some(pool) })
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn map_clients<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

/// FedNMap and prox-tracking uplink: one vector per client per round.
#[derive(Clone, Debug, PartialEq)]
pub struct UplinkMessage {
    pub y: ModelVector,
}

impl UplinkMessage {
    pub fn byte_count(&self) -> usize {
        self.y.len() * std::mem::size_of::<f64>()
    }
}

/// SCAFFOLD uplink: model delta and control-variate delta.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldUplink {
    pub delta_x: ModelVector,
    pub delta_c: ModelVector,
}

impl ScaffoldUplink {
    pub fn byte_count(&self) -> usize {
        (self.delta_x.len() + self.delta_c.len()) * std::mem::size_of::<f64>()
    }
}

/// What happened in one round, for identity checks and draw recording.
#[derive(Clone, Debug, Default)]
pub struct RoundReport {
    pub round: usize,
    /// Server point at the start of the round and its prox.
    pub z: ModelVector,
    pub x: ModelVector,
    /// Per-client update directions `y_{i,t}`.
    pub directions: Vec<ModelVector>,
    /// Per-client `(1/Q) sum_l g_{i,t}^l`.
    pub grad_means: Vec<ModelVector>,
    /// Per-client correction used in the round.
    pub corrections: Vec<ModelVector>,
    /// Per-client, per-step gradient draws when recording.
    pub draws: Option<Vec<Vec<ModelVector>>>,
    pub uplink_bytes: usize,
}

/// Common interface the simulator drives.
pub trait FederatedAlgorithm: Send {
    fn name(&self) -> &'static str;
    /// Index of the next round to run.
    fn round(&self) -> usize;
    /// Server point whose normal map the method follows.
    fn z(&self) -> &ModelVector;
    fn x(&self) -> &ModelVector;
    /// Prox parameter linking `x = prox(z)`.
    fn map_gamma(&self) -> f64;
    fn uplink_bytes_per_round(&self) -> usize;
    fn step(&mut self, src: &dyn GradientSource, exec: &Executor, record: bool) -> Result<RoundReport>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    Fednmap,
    Zhang,
    Scaffold,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Fednmap => "fednmap",
            AlgorithmKind::Zhang => "zhang",
            AlgorithmKind::Scaffold => "scaffold",
        }
    }

    pub fn build(self, reg: Regularizer, cfg: FedConfig, z0: ModelVector) -> Result<Box<dyn FederatedAlgorithm>> {
        Ok(match self {
            AlgorithmKind::Fednmap => Box::new(FedNMap::new(reg, cfg, z0)?),
            AlgorithmKind::Zhang => Box::new(Zhang::new(reg, cfg, z0)?),
            AlgorithmKind::Scaffold => Box::new(Scaffold::new(reg, cfg, z0)?),
        })
    }
}

impl std::str::FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fednmap" => Ok(AlgorithmKind::Fednmap),
            "zhang" => Ok(AlgorithmKind::Zhang),
            "scaffold" => Ok(AlgorithmKind::Scaffold),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}
