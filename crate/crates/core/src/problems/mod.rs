//! Smooth local objectives `f_i` with exact and stochastic gradient oracles.

pub mod dataset;
pub mod idx;
pub mod models;

use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{Domain, Lane, RngStream};
use crate::vector::{check_dim, ModelVector};

pub use dataset::{ClientShard, Dataset};
pub use models::ModelShape;

/// How stochastic gradients deviate from the exact local gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// Mean gradient over `batch_size` samples drawn with replacement from
    /// the client shard; a batch at least as large as the shard uses the
    /// whole shard.
    Minibatch { batch_size: usize },
    /// Exact gradient plus `N(0, sigma^2 / p * I)`, so `E||noise||^2 = sigma^2`.
    AdditiveGaussian { sigma: f64 },
}

/// `f_i(x) = 0.5 x^T A x - b^T x`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticClient {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

/// Training data split across clients, with the rows of each shard gathered
/// once up front.
#[derive(Clone, Debug)]
pub struct ClassificationData {
    pub shape: ModelShape,
    pub train: Arc<Dataset>,
    pub shards: Vec<ClientShard>,
    pub test: Option<Arc<Dataset>>,
    shard_features: Vec<Array2<f64>>,
    shard_labels: Vec<Vec<usize>>,
}

impl ClassificationData {
    pub fn new(
        shape: ModelShape,
        train: Arc<Dataset>,
        shards: Vec<ClientShard>,
        test: Option<Arc<Dataset>>,
    ) -> Result<Self> {
        if train.num_features() != shape.features() {
            return Err(Error::DimensionMismatch {
                expected: shape.features(),
                got: train.num_features(),
            });
        }
        if train.num_classes() > shape.classes() {
            return Err(Error::InvalidInput(format!(
                "dataset has {} classes, model only {}",
                train.num_classes(),
                shape.classes()
            )));
        }
        if !dataset::is_disjoint_cover(&shards, train.len()) {
            return Err(Error::InvalidInput(
                "shards must be a disjoint cover of the dataset".into(),
            ));
        }
        let shard_features = shards
            .iter()
            .map(|s| train.features().select(Axis(0), &s.sample_indices))
            .collect();
        let shard_labels = shards
            .iter()
            .map(|s| s.sample_indices.iter().map(|&i| train.labels()[i]).collect())
            .collect();
        Ok(ClassificationData {
            shape,
            train,
            shards,
            test,
            shard_features,
            shard_labels,
        })
    }
}

#[derive(Clone, Debug)]
pub enum ProblemKind {
    CompositeQuadratic(Vec<QuadraticClient>),
    LogisticRegression(ClassificationData),
    MlpOneHidden(ClassificationData),
}

/// Number of probe pairs for the empirical MLP smoothness estimate.
pub const DEFAULT_PROBE_PAIRS: usize = 1000;

#[derive(Debug)]
pub struct Problem {
    kind: ProblemKind,
    noise: NoiseModel,
    clients: usize,
    dim: usize,
    l_bound: OnceLock<f64>,
    probe_pairs: usize,
    probe_seed: u64,
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// Rayleigh-quotient stopping rule.
pub fn power_iteration(a: &Array2<f64>, seed: u64) -> f64 {
    let p = a.nrows();
    let mut rng = RngStream::indexed(seed, Domain::Probe, 0);
    let mut v: Array1<f64> = Array1::from_iter((0..p).map(|_| 1.0 + rng.random::<f64>()));
    v /= crate::vector::norm(&v);
    let mut lambda = 0.0;
    for _ in 0..200_000 {
        let w = a.dot(&v);
        let next = v.dot(&w);
        let nw = crate::vector::norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        v = w / nw;
        if (next - lambda).abs() <= 1e-15 * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

/// Quadratic testbed: `A_i = D + hetero * S_i`, `b_i = b + hetero * delta_i`
/// with `D` a fixed positive diagonal, `S_i` random PSD and `delta_i`
/// centred across clients. `hetero = 0` makes all clients identical.
pub fn make_composite_quadratic(n: usize, p: usize, hetero: f64, seed: u64) -> Result<Problem> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("quadratic needs n >= 1 and p >= 1".into()));
    }
    let mut shared = RngStream::new(seed, Domain::Problem, Lane::new(0, 0, 0));
    let diag: Vec<f64> = (0..p).map(|_| 0.5 + shared.random::<f64>()).collect();
    let b: Array1<f64> = Array1::from_iter((0..p).map(|_| StandardNormal.sample(&mut shared)));
    let mut perturb = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = RngStream::new(seed, Domain::Problem, Lane::new(i, 1, 0));
        let m = Array2::from_shape_fn((p, p), |_| StandardNormal.sample(&mut rng));
        perturb.push(m.dot(&m.t()) / p as f64);
        deltas.push(Array1::from_iter((0..p).map(|_| StandardNormal.sample(&mut rng))));
    }
    let mean_delta = crate::vector::ordered_mean(&deltas);
    let clients = perturb
        .into_iter()
        .zip(deltas)
        .map(|(s, delta)| {
            let mut a = s * hetero;
            for j in 0..p {
                a[[j, j]] += diag[j];
            }
            let b_i = &b + &((delta - &mean_delta) * hetero);
            QuadraticClient { a, b: b_i }
        })
        .collect();
    Problem::quadratic(clients, seed)
}

impl Problem {
    /// Quadratic problem from explicit `(A_i, b_i)`; `A_i` must be symmetric.
    pub fn quadratic(clients: Vec<QuadraticClient>, seed: u64) -> Result<Self> {
        let p = clients
            .first()
            .ok_or_else(|| Error::InvalidInput("need at least one client".into()))?
            .b
            .len();
        let mut l: f64 = 0.0;
        for c in &clients {
            if c.a.dim() != (p, p) || c.b.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: c.b.len(),
                });
            }
            let asym = (&c.a - &c.a.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if asym > 1e-12 * (1.0 + c.a.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                return Err(Error::InvalidInput("quadratic A_i must be symmetric".into()));
            }
            l = l.max(power_iteration(&c.a, seed));
        }
        Ok(Problem {
            clients: clients.len(),
            dim: p,
            kind: ProblemKind::CompositeQuadratic(clients),
            noise: NoiseModel::AdditiveGaussian { sigma: 0.0 },
            l_bound: OnceLock::from(l),
            probe_pairs: DEFAULT_PROBE_PAIRS,
            probe_seed: seed,
        })
    }

    /// Multinomial logistic regression; `L` uses `lambda_max(X~^T X~) / (2 N_i)`
    /// per client with the bias column appended.
    pub fn logistic(data: ClassificationData, seed: u64) -> Result<Self> {
        let ModelShape::Logistic { .. } = data.shape else {
            return Err(Error::InvalidInput("logistic problem needs a logistic shape".into()));
        };
        let mut l: f64 = 0.0;
        for (i, xs) in data.shard_features.iter().enumerate() {
            if xs.nrows() == 0 {
                continue;
            }
            let mut aug = Array2::ones((xs.nrows(), xs.ncols() + 1));
            aug.slice_mut(ndarray::s![.., ..xs.ncols()]).assign(xs);
            let gram = aug.t().dot(&aug);
            l = l.max(power_iteration(&gram, seed.wrapping_add(i as u64)) / (2.0 * xs.nrows() as f64));
        }
        Ok(Self::classification(
            ProblemKind::LogisticRegression(data),
            Some(l),
            seed,
        ))
    }

    /// One-hidden-layer sigmoid network; `L` is estimated lazily from probe pairs.
    pub fn mlp(data: ClassificationData, seed: u64) -> Result<Self> {
        let ModelShape::Mlp { .. } = data.shape else {
            return Err(Error::InvalidInput("mlp problem needs an mlp shape".into()));
        };
        Ok(Self::classification(ProblemKind::MlpOneHidden(data), None, seed))
    }

    fn classification(kind: ProblemKind, l: Option<f64>, seed: u64) -> Self {
        let data = match &kind {
            ProblemKind::LogisticRegression(d) | ProblemKind::MlpOneHidden(d) => d,
            ProblemKind::CompositeQuadratic(_) => unreachable!(),
        };
        let l_bound = OnceLock::new();
        if let Some(l) = l {
            let _ = l_bound.set(l);
        }
        Problem {
            clients: data.shards.len(),
            dim: data.shape.dim(),
            noise: NoiseModel::Minibatch { batch_size: 32 },
            kind,
            l_bound,
            probe_pairs: DEFAULT_PROBE_PAIRS,
            probe_seed: seed,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self> {
        match noise {
            NoiseModel::Minibatch { batch_size } => {
                if batch_size == 0 {
                    return Err(Error::InvalidInput("batch size must be positive".into()));
                }
                if matches!(self.kind, ProblemKind::CompositeQuadratic(_)) {
                    return Err(Error::InvalidInput(
                        "minibatch noise needs a data-driven problem".into(),
                    ));
                }
            }
            NoiseModel::AdditiveGaussian { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidInput(format!("sigma must be >= 0, got {sigma}")));
                }
            }
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn with_probe_pairs(mut self, pairs: usize) -> Self {
        self.probe_pairs = pairs.max(1);
        self
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ProblemKind::CompositeQuadratic(_) => "quadratic",
            ProblemKind::LogisticRegression(_) => "logistic",
            ProblemKind::MlpOneHidden(_) => "mlp",
        }
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn num_clients(&self) -> usize {
        self.clients
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classification_data(&self) -> Option<&ClassificationData> {
        match &self.kind {
            ProblemKind::LogisticRegression(d) | ProblemKind::MlpOneHidden(d) => Some(d),
            ProblemKind::CompositeQuadratic(_) => None,
        }
    }

    /// Smoothness constant: exact for quadratics, the standard bound for
    /// logistic regression, an empirical estimate for the MLP.
    pub fn l_bound(&self) -> f64 {
        *self.l_bound.get_or_init(|| self.probe_lipschitz())
    }

    /// Twice the largest observed `||grad f_i(x) - grad f_i(x')|| / ||x - x'||`.
    fn probe_lipschitz(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.probe_pairs {
            let i = k % self.clients;
            let mut rng = RngStream::indexed(self.probe_seed, Domain::Probe, k);
            let x: ModelVector = Array1::from_iter((0..self.dim).map(|_| 0.5 * rng.standard_normal()));
            let dx: ModelVector = Array1::from_iter((0..self.dim).map(|_| 0.05 * rng.standard_normal()));
            let xp = &x + &dx;
            let (Ok(g), Ok(gp)) = (self.full_gradient(i, &x), self.full_gradient(i, &xp)) else {
                continue;
            };
            worst = worst.max(crate::vector::dist(&g, &gp) / crate::vector::norm(&dx));
        }
        2.0 * worst
    }

    fn check_client(&self, i: usize) -> Result<()> {
        if i >= self.clients {
            return Err(Error::ClientOutOfRange {
                client: i,
                clients: self.clients,
            });
        }
        Ok(())
    }

    /// `f_i(x)` and optionally `grad f_i(x)`.
    pub fn client_loss_grad(&self, i: usize, x: &ModelVector, want_grad: bool) -> Result<(f64, Option<ModelVector>)> {
        self.check_client(i)?;
        check_dim(x, self.dim)?;
        match &self.kind {
            ProblemKind::CompositeQuadratic(cs) => {
                let c = &cs[i];
                let ax = c.a.dot(x);
                let loss = 0.5 * x.dot(&ax) - c.b.dot(x);
                Ok((loss, want_grad.then(|| ax - &c.b)))
            }
            ProblemKind::LogisticRegression(d) | ProblemKind::MlpOneHidden(d) => {
                let xs = &d.shard_features[i];
                if xs.nrows() == 0 {
                    return Err(Error::EmptyShard { client: i });
                }
                Ok(d.shape.loss_grad(x, xs.view(), &d.shard_labels[i], want_grad))
            }
        }
    }

    pub fn full_gradient(&self, i: usize, x: &ModelVector) -> Result<ModelVector> {
        Ok(self.client_loss_grad(i, x, true)?.1.expect("gradient requested"))
    }

    pub fn client_loss(&self, i: usize, x: &ModelVector) -> Result<f64> {
        Ok(self.client_loss_grad(i, x, false)?.0)
    }

    /// `f(x)` and `grad f(x)` as the client average, summed in index order.
    pub fn loss_and_gradient(&self, x: &ModelVector) -> Result<(f64, ModelVector)> {
        let mut loss = 0.0;
        let mut grad = crate::vector::zeros(self.dim);
        for i in 0..self.clients {
            let (l, g) = self.client_loss_grad(i, x, true)?;
            loss += l;
            grad += &g.expect("gradient requested");
        }
        let inv = 1.0 / self.clients as f64;
        Ok((loss * inv, grad * inv))
    }

    pub fn gradient(&self, x: &ModelVector) -> Result<ModelVector> {
        Ok(self.loss_and_gradient(x)?.1)
    }

    pub fn loss(&self, x: &ModelVector) -> Result<f64> {
        let mut loss = 0.0;
        for i in 0..self.clients {
            loss += self.client_loss(i, x)?;
        }
        Ok(loss / self.clients as f64)
    }

    /// One draw of `g_i(x; xi)`; unbiased for `grad f_i(x)`.
    pub fn stochastic_gradient(&self, i: usize, x: &ModelVector, rng: &mut RngStream) -> Result<ModelVector> {
        self.check_client(i)?;
        check_dim(x, self.dim)?;
        match self.noise {
            NoiseModel::AdditiveGaussian { sigma } => {
                let mut g = self.full_gradient(i, x)?;
                if sigma > 0.0 {
                    let scale = sigma / (self.dim as f64).sqrt();
                    for gj in g.iter_mut() {
                        let e: f64 = StandardNormal.sample(rng);
                        *gj += scale * e;
                    }
                }
                Ok(g)
            }
            NoiseModel::Minibatch { batch_size } => {
                let d = self
                    .classification_data()
                    .expect("minibatch noise only on data-driven problems");
                let xs = &d.shard_features[i];
                let m = xs.nrows();
                if m == 0 {
                    return Err(Error::EmptyShard { client: i });
                }
                if batch_size >= m {
                    // a batch covering the shard is the full-batch gradient
                    return Ok(d.shape.loss_grad(x, xs.view(), &d.shard_labels[i], true).1.unwrap());
                }
                let picks: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..m)).collect();
                let batch = xs.select(Axis(0), &picks);
                let labels: Vec<usize> = picks.iter().map(|&k| d.shard_labels[i][k]).collect();
                Ok(d.shape.loss_grad(x, batch.view(), &labels, true).1.unwrap())
            }
        }
    }

    /// Held-out accuracy for classification problems with a test set.
    pub fn test_accuracy(&self, x: &ModelVector) -> Option<f64> {
        let d = self.classification_data()?;
        let test = d.test.as_ref()?;
        let pred = d.shape.predict(x, test.features().view());
        let hits = pred.iter().zip(test.labels()).filter(|(a, b)| a == b).count();
        Some(hits as f64 / test.len() as f64)
    }

    /// Empirical `sigma^2`: the client-averaged mean squared deviation of
    /// stochastic gradients from the exact ones at `x`. An estimate only.
    pub fn estimate_sigma_sq(&self, x: &ModelVector, draws: usize, seed: u64) -> Result<f64> {
        if let NoiseModel::AdditiveGaussian { sigma } = self.noise {
            return Ok(sigma * sigma);
        }
        let mut acc = 0.0;
        for i in 0..self.clients {
            let g = self.full_gradient(i, x)?;
            for k in 0..draws {
                let mut rng = RngStream::new(seed, Domain::Probe, Lane::new(i, u32::MAX as usize, k));
                let s = self.stochastic_gradient(i, x, &mut rng)?;
                acc += crate::vector::norm_sq(&(s - &g));
            }
        }
        Ok(acc / (self.clients * draws.max(1)) as f64)
    }
}
