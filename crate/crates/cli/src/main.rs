use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fednmap::algorithms::fednmap::CorrectionRule;
use fednmap::algorithms::AlgorithmKind;
use fednmap::config::load_run_spec;
use fednmap::plot::{self, Panel, Series};
use fednmap::simulator::{self, draws, BuiltRun, MetricsRecord, RunSpec, ScheduleInfo};
use fednmap::verify::{verify, VerifyOptions};
use fednmap::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "fednmap", version, about = "Normal-map federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write metrics.csv and curves.svg.
    Run(Common),
    /// Run the n x Q grid from the [sweep] section and write speedup.csv.
    Sweep(Common),
    /// Run FedNMap against the baselines on shared seeds.
    Compare(Common),
    /// Check the protocol invariants on the configured problem.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Flip the sign of the broadcast term in the correction update
        /// (a deliberate bug the suite must catch).
        #[arg(long)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override a config key, e.g. `--set fed.q=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    quiet: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

/// Error plus the exit code it maps to.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(EXIT_FAILURE, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(EXIT_FAILURE, e.to_string())
    }
}

fn config_error(e: Error) -> Failure {
    Failure(EXIT_CONFIG, e.to_string())
}

impl Common {
    fn load(&self) -> Result<RunSpec, Failure> {
        let mut spec = load_run_spec(&self.config, &self.overrides).map_err(config_error)?;
        if let Some(w) = self.workers {
            spec.run.workers = w;
        }
        if let Some(&s) = self.seeds.first() {
            spec.seed = s;
        }
        Ok(spec)
    }

    fn seeds(&self, spec: &RunSpec) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![spec.seed]
        } else {
            self.seeds.clone()
        }
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn build(spec: &RunSpec) -> Result<BuiltRun, Failure> {
    spec.build().map_err(|e| match e {
        Error::Io(_) | Error::BadMagic { .. } | Error::Truncated { .. } => Failure(EXIT_FAILURE, e.to_string()),
        other => config_error(other),
    })
}

fn describe_schedule(b: &BuiltRun) -> String {
    let c = &b.cfg;
    let base = format!(
        "gamma={} eta_a={} eta_s={} eta_hat={} (n={}, Q={}, T={})",
        c.gamma,
        c.eta_a,
        c.eta_s,
        c.eta_hat(),
        c.n,
        c.q,
        c.rounds
    );
    match b.schedule {
        ScheduleInfo::Manual => base,
        ScheduleInfo::Nonconvex(s) => {
            let mut notes = Vec::new();
            if s.deterministic_fallback {
                notes.push("sigma=0 fallback".to_string());
            }
            if s.eta_a_rescaled {
                notes.push("eta_a raised to its bound (eta_s cap)".to_string());
            }
            for v in s.violated_bounds() {
                notes.push(format!("warning: {v} exceeds its premise bound"));
            }
            format!("nonconvex schedule, m={}: {base} {}", s.m, notes.join("; "))
        }
        ScheduleInfo::Pl { schedule, mu } => format!("pl schedule, mu={mu}, m={}: {base}", schedule.m),
    }
}

fn last_line(r: &MetricsRecord) -> String {
    let gap = r.psi_gap.map(|g| format!(" psi_gap={g:.4e}")).unwrap_or_default();
    let acc = r.test_acc.map(|a| format!(" test_acc={a:.4}")).unwrap_or_default();
    format!(
        "{} seed={} round={} fnat_sq={:.4e} psi={:.6}{gap}{acc}",
        r.algo, r.seed, r.round, r.fnat_sq, r.psi
    )
}

fn cmd_run(c: &Common) -> Result<u8, Failure> {
    let base = c.load()?;
    let out = c.out_dir()?;
    let mut all = Vec::new();
    let mut curves = Vec::new();
    let mut diverged = false;
    for seed in c.seeds(&base) {
        let mut spec = base.clone();
        spec.seed = seed;
        let b = build(&spec)?;
        c.say(describe_schedule(&b));
        let res = simulator::run_built(&b, spec.algorithm, None)?;
        if let Some(d) = &res.draws {
            draws::write_draws(out.join(format!("draws-{seed}.bin")), d)?;
        }
        if res.diverged {
            c.say(format!("seed {seed}: diverged"));
        }
        diverged |= res.diverged;
        c.say(last_line(res.records.last().expect("runs emit at least one record")));
        curves.push((format!("{} seed {seed}", spec.algorithm.name()), res.records.clone()));
        all.extend(res.records);
    }
    fs::write(out.join("metrics.csv"), simulator::metrics_csv_string(&all))?;
    fs::write(out.join("curves.svg"), plot::convergence_svg(&curves))?;
    c.say(format!("wrote {}", out.join("metrics.csv").display()));
    Ok(if diverged { EXIT_DIVERGED } else { 0 })
}

fn cmd_compare(c: &Common) -> Result<u8, Failure> {
    let base = c.load()?;
    let out = c.out_dir()?;
    let mut algos = vec![AlgorithmKind::Fednmap, AlgorithmKind::Zhang];
    let b0 = build(&base)?;
    if b0.reg.is_zero() {
        algos.push(AlgorithmKind::Scaffold);
    }
    let mut all = Vec::new();
    let mut curves = Vec::new();
    let mut diverged = false;
    for seed in c.seeds(&base) {
        let mut spec = base.clone();
        spec.seed = seed;
        let b = build(&spec)?;
        for &algo in &algos {
            let res = simulator::run_built(&b, algo, None)?;
            diverged |= res.diverged;
            c.say(last_line(res.records.last().expect("runs emit at least one record")));
            curves.push((format!("{} seed {seed}", algo.name()), res.records.clone()));
            all.extend(res.records);
        }
    }
    fs::write(out.join("compare.csv"), simulator::metrics_csv_string(&all))?;
    fs::write(out.join("compare.svg"), plot::convergence_svg(&curves))?;
    c.say(format!("wrote {}", out.join("compare.csv").display()));
    Ok(if diverged { EXIT_DIVERGED } else { 0 })
}

fn cmd_sweep(c: &Common) -> Result<u8, Failure> {
    let spec = c.load()?;
    let grid = spec
        .sweep
        .clone()
        .ok_or_else(|| Failure(EXIT_CONFIG, "sweep needs a [sweep] section with ns and qs".into()))?;
    let seeds = if c.seeds.is_empty() {
        grid.seeds.clone()
    } else {
        c.seeds.clone()
    };
    if grid.ns.is_empty() || grid.qs.is_empty() || seeds.is_empty() {
        return Err(Failure(
            EXIT_CONFIG,
            "sweep.ns, sweep.qs and the seed list must be nonempty".into(),
        ));
    }
    build(&spec)?;
    let out = c.out_dir()?;
    let rows = simulator::sweep(&spec, &grid.ns, &grid.qs, &seeds, spec.run.workers)?;
    let cells = simulator::summarize(&rows);
    fs::write(out.join("speedup.csv"), simulator::speedup_csv(&cells))?;
    let panels: Vec<Panel> = grid
        .qs
        .iter()
        .map(|&q| Panel {
            title: format!("Q = {q}"),
            x_label: "clients n".into(),
            series: vec![Series {
                label: "mean fnat_sq".into(),
                points: cells
                    .iter()
                    .filter(|cell| cell.q == q)
                    .map(|cell| (cell.n as f64, cell.mean))
                    .collect(),
                dashed: false,
            }],
        })
        .collect();
    fs::write(out.join("sweep.svg"), plot::render(&panels, 3))?;
    c.say(format!(
        "{:>5} {:>5} {:>6} {:>14} {:>12} {:>9}",
        "n", "Q", "seeds", "mean_fnat_sq", "std_err", "monotone"
    ));
    for cell in &cells {
        c.say(format!(
            "{:>5} {:>5} {:>6} {:>14.6e} {:>12.3e} {:>9}",
            cell.n, cell.q, cell.seeds, cell.mean, cell.std_err, cell.monotone
        ));
    }
    let diverged = rows.iter().any(|r| r.diverged);
    Ok(if diverged { EXIT_DIVERGED } else { 0 })
}

fn cmd_verify(c: &Common, inject_fault: bool) -> Result<u8, Failure> {
    let spec = c.load()?;
    build(&spec)?;
    let opts = VerifyOptions {
        correction_rule: if inject_fault {
            CorrectionRule::FlippedBroadcast
        } else {
            CorrectionRule::Standard
        },
        ..VerifyOptions::default()
    };
    let report = verify(&spec, opts)?;
    // the table is the command's result, so it prints even with --quiet
    print!("{}", report.table());
    Ok(if report.all_passed() { 0 } else { EXIT_VERIFY })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Verify { common, inject_fault } => cmd_verify(common, *inject_fault),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
