//! Deterministic round orchestration, metrics capture, replay and sweeps.

pub mod draws;
pub mod spec;

use std::io::Write;
use std::time::Instant;

use crate::algorithms::{AlgorithmKind, DrawTable, Executor, FederatedAlgorithm, GradientSource, LiveOracle};
use crate::error::{Error, Result};
use crate::maps::snapshot_with;
use crate::vector::{is_finite, norm, ModelVector};

pub use spec::{
    BuiltRun, DataSource, DataSpec, FedSpec, PartitionKind, ProblemSpec, RegularizerSpec, RunOptions, RunSpec,
    ScheduleInfo, ScheduleKind, SweepSpec,
};

pub const CSV_HEADER: [&str; 17] = [
    "round",
    "algo",
    "n",
    "Q",
    "seed",
    "gamma",
    "eta_a",
    "eta_s",
    "fnat_sq",
    "fnor_sq",
    "psi",
    "psi_gap",
    "lyapunov",
    "train_loss",
    "test_acc",
    "uplink_bytes",
    "wall_ns",
];

/// One row of `metrics.csv`, measured with exact gradients after `round` rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub algo: String,
    pub n: usize,
    pub q: usize,
    pub seed: u64,
    pub gamma: f64,
    pub eta_a: f64,
    pub eta_s: f64,
    pub fnat_sq: f64,
    pub fnor_sq: f64,
    pub psi: f64,
    pub psi_gap: Option<f64>,
    pub lyapunov: f64,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
    /// Cumulative uplink traffic up to this round.
    pub uplink_bytes: u64,
    pub wall_ns: Option<u64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn fields(&self) -> [String; 17] {
        [
            self.round.to_string(),
            self.algo.clone(),
            self.n.to_string(),
            self.q.to_string(),
            self.seed.to_string(),
            self.gamma.to_string(),
            self.eta_a.to_string(),
            self.eta_s.to_string(),
            self.fnat_sq.to_string(),
            self.fnor_sq.to_string(),
            self.psi.to_string(),
            opt(self.psi_gap),
            self.lyapunov.to_string(),
            self.train_loss.to_string(),
            opt(self.test_acc),
            self.uplink_bytes.to_string(),
            opt(self.wall_ns),
        ]
    }

    pub fn from_fields(f: &[&str]) -> Result<Self> {
        if f.len() != CSV_HEADER.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} columns, got {}",
                CSV_HEADER.len(),
                f.len()
            )));
        }
        fn num<T: std::str::FromStr>(s: &str, col: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::InvalidInput(format!("bad value `{s}` in column {col}")))
        }
        fn maybe<T: std::str::FromStr>(s: &str, col: &str) -> Result<Option<T>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, col).map(Some)
            }
        }
        Ok(MetricsRecord {
            round: num(f[0], "round")?,
            algo: f[1].to_string(),
            n: num(f[2], "n")?,
            q: num(f[3], "Q")?,
            seed: num(f[4], "seed")?,
            gamma: num(f[5], "gamma")?,
            eta_a: num(f[6], "eta_a")?,
            eta_s: num(f[7], "eta_s")?,
            fnat_sq: num(f[8], "fnat_sq")?,
            fnor_sq: num(f[9], "fnor_sq")?,
            psi: num(f[10], "psi")?,
            psi_gap: maybe(f[11], "psi_gap")?,
            lyapunov: num(f[12], "lyapunov")?,
            train_loss: num(f[13], "train_loss")?,
            test_acc: maybe(f[14], "test_acc")?,
            uplink_bytes: num(f[15], "uplink_bytes")?,
            wall_ns: maybe(f[16], "wall_ns")?,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_csv_string(records: &[MetricsRecord]) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, records).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidInput("unexpected metrics header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            MetricsRecord::from_fields(&rec.iter().collect::<Vec<_>>())
        })
        .collect()
}

/// Result of one simulated run.
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    /// The iterate left the ball of radius `divergence_threshold` or became non-finite.
    pub diverged: bool,
    pub draws: Option<DrawTable>,
    pub final_z: ModelVector,
    pub final_x: ModelVector,
    pub schedule: ScheduleInfo,
    pub psi_star: Option<f64>,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        metrics_csv_string(&self.records)
    }

    /// Mean of `fnat_sq` over recorded rounds `t < T` (the final round alone when `T = 0`).
    pub fn mean_fnat_sq(&self) -> f64 {
        mean_fnat_sq(&self.records)
    }
}

pub fn mean_fnat_sq(records: &[MetricsRecord]) -> f64 {
    let last = records.last().map_or(0, |r| r.round);
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| r.round < last || last == 0)
        .map(|r| r.fnat_sq)
        .collect();
    if vals.is_empty() {
        return f64::NAN;
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub fn run(spec: &RunSpec) -> Result<RunOutput> {
    let built = spec.build()?;
    run_built(&built, spec.algorithm, None)
}

/// Re-executes `spec` consuming `draws` instead of live gradient samples.
pub fn replay(spec: &RunSpec, draws: &DrawTable) -> Result<RunOutput> {
    let built = spec.build()?;
    run_built(&built, spec.algorithm, Some(draws))
}

fn measure(
    b: &BuiltRun,
    alg: &dyn FederatedAlgorithm,
    uplink: u64,
    wall_ns: Option<u64>,
    diverged: bool,
) -> Result<MetricsRecord> {
    let mut rec = MetricsRecord {
        round: alg.round(),
        algo: alg.name().to_string(),
        n: b.cfg.n,
        q: b.cfg.q,
        seed: b.spec.seed,
        gamma: b.cfg.gamma,
        eta_a: b.cfg.eta_a,
        eta_s: b.cfg.eta_s,
        fnat_sq: f64::NAN,
        fnor_sq: f64::NAN,
        psi: f64::NAN,
        psi_gap: None,
        lyapunov: f64::NAN,
        train_loss: f64::NAN,
        test_acc: None,
        uplink_bytes: uplink,
        wall_ns,
    };
    if diverged {
        return Ok(rec);
    }
    let s = snapshot_with(&b.problem, &b.reg, b.cfg.gamma, alg.map_gamma(), alg.z())?;
    rec.fnat_sq = s.fnat_sq;
    rec.fnor_sq = s.fnor_sq;
    rec.psi = s.psi_value;
    rec.psi_gap = b.psi_star.map(|p| s.psi_value - p);
    rec.lyapunov = s.lyapunov;
    rec.train_loss = s.loss;
    rec.test_acc = b.problem.test_accuracy(&s.x);
    Ok(rec)
}

/// Runs `algo` on a built spec. Metrics never touch the gradient streams,
/// so the trajectory does not depend on `metrics_every`.
pub fn run_built(b: &BuiltRun, algo: AlgorithmKind, draws: Option<&DrawTable>) -> Result<RunOutput> {
    let exec = Executor::with_workers(b.spec.run.workers)?;
    run_with(b, algo, draws, &exec)
}

pub fn run_with(b: &BuiltRun, algo: AlgorithmKind, draws: Option<&DrawTable>, exec: &Executor) -> Result<RunOutput> {
    let opts = &b.spec.run;
    let live = LiveOracle {
        problem: &b.problem,
        seed: b.spec.seed,
    };
    let src: &dyn GradientSource = match draws {
        Some(d) => d,
        None => &live,
    };
    let mut alg = algo.build(b.reg, b.cfg, b.z0.clone())?;
    let record = opts.record_draws;
    let mut table = record.then(DrawTable::new);
    let start = Instant::now();
    let clock = |s: &Instant| opts.timing.then(|| s.elapsed().as_nanos() as u64);

    let mut records = vec![measure(b, alg.as_ref(), 0, clock(&start), false)?];
    let mut uplink = 0u64;
    let mut diverged = false;
    for t in 1..=b.cfg.rounds {
        let report = alg.step(src, exec, record)?;
        uplink += report.uplink_bytes as u64;
        if let Some(tab) = table.as_mut() {
            tab.absorb(&report)?;
        }
        diverged = !is_finite(alg.z()) || norm(alg.z()) > opts.divergence_threshold;
        if diverged || t % opts.metrics_every == 0 || t == b.cfg.rounds {
            records.push(measure(b, alg.as_ref(), uplink, clock(&start), diverged)?);
        }
        if diverged {
            break;
        }
    }
    Ok(RunOutput {
        records,
        diverged,
        draws: table,
        final_z: alg.z().clone(),
        final_x: alg.x().clone(),
        schedule: b.schedule,
        psi_star: b.psi_star,
    })
}

/// One `(n, Q, seed)` cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub q: usize,
    pub seed: u64,
    pub mean_fnat_sq: f64,
    pub final_fnat_sq: f64,
    pub final_psi_gap: Option<f64>,
    pub diverged: bool,
}

/// Runs the grid `ns x qs x seeds`. The problem (and any data partition) is
/// rebuilt for every `n`; cells run in parallel when `workers > 1`.
pub fn sweep(base: &RunSpec, ns: &[usize], qs: &[usize], seeds: &[u64], workers: usize) -> Result<Vec<SweepRow>> {
    if ns.is_empty() || qs.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput("sweep needs nonempty n, Q and seed lists".into()));
    }
    let mut cells = Vec::new();
    for &n in ns {
        for &q in qs {
            for &seed in seeds {
                cells.push((n, q, seed));
            }
        }
    }
    let pool = Executor::with_workers(workers)?;
    let seq = Executor::sequential();
    pool.map_clients(cells.len(), |k| {
        let (n, q, seed) = cells[k];
        let mut spec = base.clone();
        spec.fed.n = n;
        spec.fed.q = q;
        spec.seed = seed;
        spec.run.record_draws = false;
        spec.run.timing = false;
        let built = spec.build()?;
        let out = run_with(&built, spec.algorithm, None, &seq)?;
        let last = out.records.last().expect("a run always has a record");
        Ok(SweepRow {
            n,
            q,
            seed,
            mean_fnat_sq: out.mean_fnat_sq(),
            final_fnat_sq: last.fnat_sq,
            final_psi_gap: last.psi_gap,
            diverged: out.diverged,
        })
    })
}

/// Seed-aggregated statistics for one `(n, Q)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub n: usize,
    pub q: usize,
    pub seeds: usize,
    pub mean: f64,
    /// Standard error of `mean` across seeds (0 with one seed).
    pub std_err: f64,
    pub final_fnat_sq: f64,
    /// `mean` is no larger than that of every cell with smaller or equal `n` and `Q`.
    pub monotone: bool,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, usize)> = rows.iter().map(|r| (r.n, r.q)).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut cells: Vec<CellSummary> = keys
        .into_iter()
        .map(|(n, q)| {
            let vals: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n && r.q == q).collect();
            let k = vals.len() as f64;
            let mean = vals.iter().map(|r| r.mean_fnat_sq).sum::<f64>() / k;
            let var = if vals.len() > 1 {
                vals.iter().map(|r| (r.mean_fnat_sq - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            CellSummary {
                n,
                q,
                seeds: vals.len(),
                mean,
                std_err: (var / k).sqrt(),
                final_fnat_sq: vals.iter().map(|r| r.final_fnat_sq).sum::<f64>() / k,
                monotone: true,
            }
        })
        .collect();
    let snapshot = cells.clone();
    for c in cells.iter_mut() {
        c.monotone = snapshot
            .iter()
            .filter(|o| o.n <= c.n && o.q <= c.q && (o.n, o.q) != (c.n, c.q))
            .all(|o| c.mean <= o.mean);
    }
    cells
}

pub fn speedup_csv(cells: &[CellSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n",
        "Q",
        "nQ",
        "seeds",
        "mean_fnat_sq",
        "std_err",
        "final_fnat_sq",
        "monotone",
    ])
    .expect("in-memory write");
    for c in cells {
        w.write_record([
            c.n.to_string(),
            c.q.to_string(),
            (c.n * c.q).to_string(),
            c.seeds.to_string(),
            c.mean.to_string(),
            c.std_err.to_string(),
            c.final_fnat_sq.to_string(),
            c.monotone.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
