//! Declarative run description and its translation into concrete objects.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algorithms::schedule::{nonconvex_params, pl_params, NonconvexInputs, NonconvexSchedule, PlSchedule};
use crate::algorithms::{AlgorithmKind, FedConfig};
use crate::error::{Error, Result};
use crate::maps::{psi, reference_solve};
use crate::problems::dataset::{partition_dirichlet, partition_sorted_by_label, synthetic_digits_dataset};
use crate::problems::idx::load_idx;
use crate::problems::{make_composite_quadratic, ClassificationData, Dataset, ModelShape, NoiseModel, Problem};
use crate::regularizers::Regularizer;
use crate::rng::{Domain, Lane, RngStream};
use crate::vector::ModelVector;

/// Everything that determines a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_algorithm")]
    pub algorithm: AlgorithmKind,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    #[serde(default)]
    pub fed: FedSpec,
    #[serde(default)]
    pub run: RunOptions,
    /// Grid for the `sweep` command; ignored by single runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub qs: Vec<usize>,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: Vec<u64>,
}

fn default_sweep_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_algorithm() -> AlgorithmKind {
    AlgorithmKind::Fednmap
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Random composite quadratic; `heterogeneity = 0` makes all clients identical.
    Quadratic {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "one")]
        heterogeneity: f64,
        /// Additive Gaussian gradient noise with `E||noise||^2 = sigma^2`.
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        problem_seed: u64,
        #[serde(default = "one")]
        init_scale: f64,
    },
    /// Multinomial logistic regression.
    Logistic {
        #[serde(default)]
        data: DataSpec,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default)]
        init_scale: f64,
    },
    /// One-hidden-layer sigmoid network.
    Mlp {
        #[serde(default)]
        data: DataSpec,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_mlp_init")]
        init_scale: f64,
        /// Point pairs used to estimate the smoothness constant.
        #[serde(default = "default_probe_pairs")]
        probe_pairs: usize,
    },
}

fn default_dim() -> usize {
    20
}
fn one() -> f64 {
    1.0
}
fn default_batch() -> usize {
    32
}
fn default_hidden() -> usize {
    32
}
fn default_mlp_init() -> f64 {
    0.1
}
fn default_probe_pairs() -> usize {
    crate::problems::DEFAULT_PROBE_PAIRS
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated digit-like images; no files needed.
    #[default]
    Synthetic,
    /// IDX image/label files.
    Idx,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Sort by label and cut into contiguous shards.
    #[default]
    Sorted,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub source: DataSource,
    /// Training samples to generate, or to keep from the IDX file.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    /// Synthetic image side length.
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default)]
    pub data_seed: u64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    #[serde(default)]
    pub partition: PartitionKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_samples() -> usize {
    2000
}
fn default_test_samples() -> usize {
    500
}
fn default_side() -> usize {
    12
}
fn default_classes() -> usize {
    10
}
fn default_alpha() -> f64 {
    0.5
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            source: DataSource::Synthetic,
            samples: default_samples(),
            test_samples: default_test_samples(),
            side: default_side(),
            classes: default_classes(),
            data_seed: 0,
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            partition: PartitionKind::Sorted,
            alpha: default_alpha(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerSpec {
    // braces so that stray keys such as `nu` are rejected
    Zero {},
    L1 { nu: f64 },
    ElasticNet { nu1: f64, nu2: f64 },
    Box { lo: f64, hi: f64 },
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec::Zero {}
    }
}

impl RegularizerSpec {
    pub fn build(&self) -> Result<Regularizer> {
        match *self {
            RegularizerSpec::Zero {} => Ok(Regularizer::zero()),
            RegularizerSpec::L1 { nu } => Regularizer::l1(nu),
            RegularizerSpec::ElasticNet { nu1, nu2 } => Regularizer::elastic_net(nu1, nu2),
            RegularizerSpec::Box { lo, hi } => Regularizer::box_indicator(lo, hi),
        }
    }

    /// Strong-convexity modulus the regularizer alone guarantees.
    pub fn certified_mu(&self) -> Option<f64> {
        match *self {
            RegularizerSpec::ElasticNet { nu2, .. } if nu2 > 0.0 => Some(2.0 * nu2),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Use `eta_a`, `eta_s`, `gamma` as given.
    #[default]
    Manual,
    /// Stepsizes from the sublinear nonconvex rate bound.
    Nonconvex,
    /// Stepsizes from the linear rate bound under the proximal-PL condition.
    Pl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub schedule: ScheduleKind,
    pub eta_a: Option<f64>,
    pub eta_s: Option<f64>,
    pub gamma: Option<f64>,
    /// Noise level for the nonconvex schedule; estimated when absent.
    pub sigma: Option<f64>,
    /// `psi(x_0) - psi^*` for the nonconvex schedule; estimated when absent.
    pub delta_psi: Option<f64>,
    /// PL constant for the linear-rate schedule; `2 nu2` for elastic net when absent.
    pub mu: Option<f64>,
    #[serde(default = "default_cap")]
    pub eta_s_cap: f64,
}

fn default_n() -> usize {
    10
}
fn default_q() -> usize {
    5
}
fn default_rounds() -> usize {
    100
}
fn default_cap() -> f64 {
    crate::algorithms::schedule::DEFAULT_ETA_S_CAP
}

pub const DEFAULT_ETA_A: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 1.0;

impl Default for FedSpec {
    fn default() -> Self {
        FedSpec {
            n: default_n(),
            q: default_q(),
            rounds: default_rounds(),
            schedule: ScheduleKind::Manual,
            eta_a: None,
            eta_s: None,
            gamma: None,
            sigma: None,
            delta_psi: None,
            mu: None,
            eta_s_cap: default_cap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[serde(default = "default_every")]
    pub metrics_every: usize,
    #[serde(default)]
    pub record_draws: bool,
    /// Worker threads for the client phase; results do not depend on it.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Fill the `wall_ns` column. Off by default because timings break
    /// byte-identical output.
    #[serde(default)]
    pub timing: bool,
    /// Solve for `psi^*` on convex quadratic problems.
    #[serde(default = "yes")]
    pub reference: bool,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_every() -> usize {
    1
}
fn default_workers() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_divergence() -> f64 {
    1e12
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            metrics_every: 1,
            record_draws: false,
            workers: 1,
            timing: false,
            reference: true,
            divergence_threshold: default_divergence(),
        }
    }
}

/// How the stepsizes were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ScheduleInfo {
    Manual,
    Nonconvex(NonconvexSchedule),
    Pl { schedule: PlSchedule, mu: f64 },
}

/// A spec resolved into a problem, regularizer, parameters and start point.
pub struct BuiltRun {
    pub spec: RunSpec,
    pub problem: Arc<Problem>,
    pub reg: Regularizer,
    pub cfg: FedConfig,
    pub z0: ModelVector,
    pub psi_star: Option<f64>,
    pub schedule: ScheduleInfo,
}

impl RunSpec {
    /// Minimal spec on a quadratic problem with defaults everywhere else.
    pub fn quadratic(seed: u64) -> Self {
        RunSpec {
            seed,
            algorithm: AlgorithmKind::Fednmap,
            problem: ProblemSpec::Quadratic {
                dim: default_dim(),
                heterogeneity: 1.0,
                sigma: 0.0,
                problem_seed: 0,
                init_scale: 1.0,
            },
            regularizer: RegularizerSpec::Zero {},
            fed: FedSpec::default(),
            run: RunOptions::default(),
            sweep: None,
        }
    }

    pub fn build(&self) -> Result<BuiltRun> {
        let reg = self.regularizer.build()?;
        let problem = Arc::new(self.build_problem()?);
        let z0 = self.initial_point(problem.dim());
        if self.run.metrics_every == 0 {
            return Err(Error::Config("run.metrics_every must be at least 1".into()));
        }

        let psi_star = if self.run.reference && matches!(self.problem, ProblemSpec::Quadratic { .. }) {
            let gamma = 1.0 / problem.l_bound().max(1e-12);
            let sol = reference_solve(&problem, &reg, gamma, &z0, 1e-11, 200_000)?;
            sol.certified(1e-8).then_some(sol.psi_star.min(sol.prox_grad_psi))
        } else {
            None
        };

        let fed = &self.fed;
        let (cfg, schedule) = match fed.schedule {
            ScheduleKind::Manual => {
                let cfg = FedConfig {
                    n: fed.n,
                    q: fed.q,
                    rounds: fed.rounds,
                    eta_a: fed.eta_a.unwrap_or(DEFAULT_ETA_A),
                    eta_s: fed.eta_s.unwrap_or(1.0),
                    gamma: fed.gamma.unwrap_or(DEFAULT_GAMMA),
                };
                (cfg, ScheduleInfo::Manual)
            }
            ScheduleKind::Nonconvex => {
                self.reject_manual_steps()?;
                // the schedule's gamma depends only on L and rho, so the start point is known here
                let x0 = reg.prox(1.0 / (5.0 * (problem.l_bound() + reg.rho())), &z0)?;
                let sigma = match fed.sigma {
                    Some(s) => s,
                    None => problem.estimate_sigma_sq(&x0, 64, self.seed)?.sqrt(),
                };
                let delta_psi = match fed.delta_psi {
                    Some(d) => d,
                    None => {
                        let d = psi(&problem, &reg, &x0)? - psi_star.unwrap_or(0.0);
                        if d > 0.0 {
                            d
                        } else {
                            1.0
                        }
                    }
                };
                let s = nonconvex_params(NonconvexInputs {
                    l: problem.l_bound(),
                    rho: reg.rho(),
                    sigma,
                    t: fed.rounds.max(1),
                    n: fed.n,
                    q: fed.q,
                    delta_psi,
                    eta_s_cap: fed.eta_s_cap,
                })?;
                let cfg = FedConfig {
                    n: fed.n,
                    q: fed.q,
                    rounds: fed.rounds,
                    eta_a: s.eta_a,
                    eta_s: s.eta_s,
                    gamma: s.gamma,
                };
                (cfg, ScheduleInfo::Nonconvex(s))
            }
            ScheduleKind::Pl => {
                if fed.eta_a.is_some() || fed.gamma.is_some() {
                    return Err(Error::Config(
                        "fed.eta_a and fed.gamma are set by the pl schedule".into(),
                    ));
                }
                let mu = fed
                    .mu
                    .or(self.regularizer.certified_mu())
                    .ok_or_else(|| Error::Config("pl schedule needs fed.mu or an elastic net with nu2 > 0".into()))?;
                let s = pl_params(
                    problem.l_bound(),
                    reg.rho(),
                    mu,
                    fed.n,
                    fed.q,
                    fed.rounds.max(1),
                    fed.eta_s.unwrap_or(1.0),
                )?;
                if s.degenerate {
                    return Err(Error::Config("pl schedule is degenerate: log(nQT) = 0".into()));
                }
                let cfg = FedConfig {
                    n: fed.n,
                    q: fed.q,
                    rounds: fed.rounds,
                    eta_a: s.eta_a,
                    eta_s: s.eta_s,
                    gamma: s.gamma,
                };
                (cfg, ScheduleInfo::Pl { schedule: s, mu })
            }
        };
        cfg.validate(&reg)?;

        Ok(BuiltRun {
            spec: self.clone(),
            problem,
            reg,
            cfg,
            z0,
            psi_star,
            schedule,
        })
    }

    fn reject_manual_steps(&self) -> Result<()> {
        let f = &self.fed;
        if f.eta_a.is_some() || f.eta_s.is_some() || f.gamma.is_some() {
            return Err(Error::Config(
                "fed.eta_a, fed.eta_s and fed.gamma are set by the nonconvex schedule".into(),
            ));
        }
        Ok(())
    }

    fn initial_point(&self, p: usize) -> ModelVector {
        let scale = match self.problem {
            ProblemSpec::Quadratic { init_scale, .. }
            | ProblemSpec::Logistic { init_scale, .. }
            | ProblemSpec::Mlp { init_scale, .. } => init_scale,
        };
        let mut rng = RngStream::indexed(self.seed, Domain::Init, 0);
        ModelVector::from_iter((0..p).map(|_| scale * rng.standard_normal()))
    }

    fn build_problem(&self) -> Result<Problem> {
        let n = self.fed.n;
        match &self.problem {
            ProblemSpec::Quadratic {
                dim,
                heterogeneity,
                sigma,
                problem_seed,
                ..
            } => make_composite_quadratic(n, *dim, *heterogeneity, *problem_seed)?
                .with_noise(NoiseModel::AdditiveGaussian { sigma: *sigma }),
            ProblemSpec::Logistic { data, batch_size, .. } => {
                let (train, test) = load_data(data)?;
                let shape = ModelShape::Logistic {
                    d: train.num_features(),
                    k: data.classes,
                };
                let cd = self.classification(shape, train, test, data)?;
                Problem::logistic(cd, self.seed)?.with_noise(NoiseModel::Minibatch {
                    batch_size: *batch_size,
                })
            }
            ProblemSpec::Mlp {
                data,
                hidden,
                batch_size,
                probe_pairs,
                ..
            } => {
                let (train, test) = load_data(data)?;
                let shape = ModelShape::Mlp {
                    d: train.num_features(),
                    h: *hidden,
                    k: data.classes,
                };
                let cd = self.classification(shape, train, test, data)?;
                Ok(Problem::mlp(cd, data.data_seed)?
                    .with_probe_pairs(*probe_pairs)
                    .with_noise(NoiseModel::Minibatch {
                        batch_size: *batch_size,
                    })?)
            }
        }
    }

    fn classification(
        &self,
        shape: ModelShape,
        train: Dataset,
        test: Option<Dataset>,
        data: &DataSpec,
    ) -> Result<ClassificationData> {
        let shards = match data.partition {
            PartitionKind::Sorted => partition_sorted_by_label(&train, self.fed.n)?,
            PartitionKind::Dirichlet => {
                let mut rng = RngStream::new(self.seed, Domain::Partition, Lane::new(self.fed.n, 0, 0));
                partition_dirichlet(&train, self.fed.n, data.alpha, &mut rng)?
            }
        };
        ClassificationData::new(shape, Arc::new(train), shards, test.map(Arc::new))
    }
}

fn load_data(data: &DataSpec) -> Result<(Dataset, Option<Dataset>)> {
    match data.source {
        DataSource::Synthetic => {
            let train = synthetic_digits_dataset(data.samples, data.side, data.classes, data.data_seed, 0);
            let test = (data.test_samples > 0)
                .then(|| synthetic_digits_dataset(data.test_samples, data.side, data.classes, data.data_seed, 1));
            Ok((train, test))
        }
        DataSource::Idx => {
            let (Some(images), Some(labels)) = (&data.images, &data.labels) else {
                return Err(Error::Config(
                    "idx data needs problem.data.images and problem.data.labels".into(),
                ));
            };
            let train = load_idx(images, labels, Some(data.samples))?;
            let test = match (&data.test_images, &data.test_labels) {
                (Some(i), Some(l)) => Some(load_idx(i, l, Some(data.test_samples))?),
                (None, None) => None,
                _ => return Err(Error::Config("set both test_images and test_labels, or neither".into())),
            };
            Ok((train, test))
        }
    }
}
