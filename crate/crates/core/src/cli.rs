//! Command-line interface: `learn`, `eval`, `em`, `bem`, `bench-flows` and
//! `validate`.
//!
//! Exit codes are 0 on success, 1 on runtime errors and 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::bits_per_dimension;
use crate::circuit::{check_structure, Circuit};
use crate::dataset::Dataset;
use crate::ensemble::{bem_fit, em_fit, perturbed_init, select_components, EmConfig, SharedMixture, DEFAULT_GRID};
use crate::error::Result;
use crate::flows::{compute_flows, log_likelihood, mixture_log_likelihood, ParamMatrix};
use crate::logspace::logsumexp;
use crate::search::{strudel_learn, Heuristic, IterationRecord, SearchConfig};
use crate::vtree::Vtree;

pub const BENCH_COMPONENTS: [usize; 7] = [1, 2, 5, 10, 20, 50, 100];

#[derive(Debug, Parser)]
#[command(
    name = "strudel",
    version,
    about = "Learn and evaluate structured probabilistic circuits"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a circuit by structure search from a Chow-Liu tree.
    Learn(LearnArgs),
    /// Report log-likelihood and bits per dimension of a circuit or mixture.
    Eval(EvalArgs),
    /// Fit a shared-structure mixture by EM.
    Em(EmArgs),
    /// Fit shared-structure mixtures by EM on bootstrap resamples.
    Bem(BemArgs),
    /// Time shared-flow mixture evaluation against bottom-up evaluation.
    BenchFlows(BenchArgs),
    /// Check a circuit's structural properties against its vtree.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Output prefix for `<out>.psc`, `<out>.vtree` and `<out>.log.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pseudocount: f64,
    #[arg(long, default_value_t = 1)]
    pub depth_bound: usize,
    #[arg(long, default_value_t = 100)]
    pub patience: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value = "eflow-vmi")]
    pub heuristic: Heuristic,
    #[arg(long, default_value_t = 1337)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    /// Mixture parameter file written by `em` or `bem`.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    /// Required with `--grid`.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub components: usize,
    /// Comma-separated component counts to choose from on validation data.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pseudocount: f64,
    #[arg(long, default_value_t = 1337)]
    pub seed: u64,
    /// Output prefix for `<out>.psc` and `<out>.mix`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BemArgs {
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long, default_value_t = 10)]
    pub bags: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = BENCH_COMPONENTS)]
    pub components: Vec<usize>,
    /// Timings are the minimum over this many runs.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1337)]
    pub seed: u64,
    /// CSV destination (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub circuit: PathBuf,
    #[arg(long)]
    pub vtree: PathBuf,
}

/// A semantic flag error detected after parsing; exits with code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building the thread pool")?;
    pool.install(|| match cli.command {
        Command::Learn(a) => cmd_learn(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Em(a) => cmd_em(&a, None),
        Command::Bem(a) => cmd_em(&a.em, Some(a.bags)),
        Command::BenchFlows(a) => cmd_bench_flows(&a),
        Command::Validate(a) => cmd_validate(&a),
    })
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_learn(a: &LearnArgs) -> anyhow::Result<()> {
    let cfg = SearchConfig {
        heuristic: a.heuristic,
        depth_bound: a.depth_bound,
        patience: a.patience,
        max_iters: a.max_iters,
        seed: a.seed,
        pseudocount: a.pseudocount,
        alpha: a.alpha,
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let train = Dataset::load(&a.train)?;
    let valid = Dataset::load(&a.valid)?;
    let learned = strudel_learn(&train, &valid, &cfg)?;

    learned.circuit.save(with_suffix(&a.out, ".psc"))?;
    learned.vtree.save(with_suffix(&a.out, ".vtree"))?;
    let mut log = String::from(IterationRecord::CSV_HEADER);
    log.push('\n');
    for r in &learned.history {
        log.push_str(&r.csv_row());
        log.push('\n');
    }
    let log_path = with_suffix(&a.out, ".log.csv");
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;

    let best = &learned.history[learned.best_iteration];
    println!("iterations {}", learned.history.len() - 1);
    println!("best_iteration {}", learned.best_iteration);
    println!("train_ll {}", best.train_ll);
    println!("valid_ll {}", best.valid_ll);
    println!("edges {}", learned.circuit.num_edges());
    Ok(())
}

/// Mean, total and bits-per-dimension of per-sample log-likelihoods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub samples: usize,
    pub mean_ll: f64,
    pub total_ll: f64,
    pub bpd: f64,
}

impl Metrics {
    pub fn from_lls(lls: &[f64], num_vars: usize) -> Self {
        let total_ll: f64 = lls.iter().sum();
        let n = lls.len();
        Metrics {
            samples: n,
            mean_ll: total_ll / n as f64,
            total_ll,
            bpd: bits_per_dimension(total_ll, n as f64, num_vars),
        }
    }

    pub fn print(&self, label: &str) {
        let p = if label.is_empty() {
            String::new()
        } else {
            format!("{label}_")
        };
        println!("{p}samples {}", self.samples);
        println!("{p}mean_ll {}", self.mean_ll);
        println!("{p}total_ll {}", self.total_ll);
        println!("{p}bpd {}", self.bpd);
    }
}

pub fn evaluate(c: &Circuit, d: &Dataset) -> Result<Metrics> {
    let f = compute_flows(c, d)?;
    let lls = log_likelihood(c, &f)?.per_sample;
    Ok(Metrics::from_lls(&lls, d.num_vars()))
}

pub fn evaluate_mixture(m: &SharedMixture, d: &Dataset) -> Result<Metrics> {
    Ok(Metrics::from_lls(&m.log_likelihoods(d)?, d.num_vars()))
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let d = Dataset::load(&a.data)?;
    let metrics = match &a.mixture {
        Some(mix) => evaluate_mixture(&SharedMixture::load(&a.circuit, mix)?, &d)?,
        None => evaluate(&Circuit::load(&a.circuit)?, &d)?,
    };
    metrics.print("");
    Ok(())
}

fn cmd_em(a: &EmArgs, bags: Option<usize>) -> anyhow::Result<()> {
    if a.components == 0 {
        bail!(UsageError("--components must be at least 1".into()));
    }
    if bags == Some(0) {
        bail!(UsageError("--bags must be at least 1".into()));
    }
    if let Some(grid) = &a.grid {
        if a.valid.is_none() {
            bail!(UsageError("--grid needs --valid".into()));
        }
        if grid.contains(&0) {
            bail!(UsageError("grid values must be at least 1".into()));
        }
    }
    let structure = Circuit::load(&a.circuit)?;
    let train = Dataset::load(&a.train)?;
    let valid = a.valid.as_ref().map(Dataset::load).transpose()?;
    let test = a.test.as_ref().map(Dataset::load).transpose()?;
    let cfg = EmConfig {
        components: a.components,
        iters: a.iters,
        tol: a.tol,
        seed: a.seed,
        pseudocount: a.pseudocount,
    };
    let fit = |k: usize| -> Result<SharedMixture> {
        let cfg = EmConfig {
            components: k,
            ..cfg.clone()
        };
        match bags {
            Some(b) => bem_fit(&structure, &train, b, &cfg),
            None => Ok(em_fit(&structure, &train, &cfg)?.mixture),
        }
    };
    let mixture = match &a.grid {
        Some(grid) => {
            let valid = valid.as_ref().expect("checked above");
            let grid: &[usize] = if grid.is_empty() { &DEFAULT_GRID } else { grid };
            let sel = select_components(grid, valid, fit)?;
            for (k, ll) in &sel.scores {
                println!("grid {k} {ll}");
            }
            println!("selected_components {}", sel.best_components);
            sel.mixture
        }
        None => fit(a.components)?,
    };

    mixture.structure().save(with_suffix(&a.out, ".psc"))?;
    mixture.save_params(with_suffix(&a.out, ".mix"))?;
    println!("components {}", mixture.components());
    evaluate_mixture(&mixture, &train)?.print("train");
    if let Some(v) = &valid {
        evaluate_mixture(&mixture, v)?.print("valid");
    }
    if let Some(t) = &test {
        evaluate_mixture(&mixture, t)?.print("test");
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub components: usize,
    pub flow_seconds: f64,
    pub classical_seconds: f64,
    pub speedup: f64,
}

fn min_time<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        out = Some(v);
    }
    Ok((best, out.expect("at least one run")))
}

/// Times mixture log-likelihoods of `d` for each component count: one flow
/// pass plus a flow/parameter product, against bottom-up evaluation of every
/// component. Components are seeded perturbations of `c`'s parameters.
pub fn bench_flows(c: &Circuit, d: &Dataset, ks: &[usize], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks.iter().filter(|&&k| k > 0) {
        let columns = perturbed_init(c, &c.params(), k, seed);
        let theta = ParamMatrix::from_columns(&columns)?;
        let log_w = vec![-(k as f64).ln(); k];
        let (flow_seconds, flow_ll) = min_time(repeats, || {
            let f = compute_flows(c, d)?;
            mixture_log_likelihood(c, &theta, &log_w, &f)
        })?;
        let (classical_seconds, classical_ll) = min_time(repeats, || {
            let per: Vec<Vec<f64>> = columns
                .iter()
                .map(|col| c.log_likelihoods_classical(d, Some(col)))
                .collect();
            let mut buf = vec![0.0; k];
            Ok((0..d.num_rows())
                .map(|h| {
                    for j in 0..k {
                        buf[j] = per[j][h] + log_w[j];
                    }
                    logsumexp(&buf)
                })
                .collect::<Vec<f64>>())
        })?;
        let worst = flow_ll
            .iter()
            .zip(&classical_ll)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max);
        if worst > 1e-6 {
            log::warn!("k = {k}: flow and classical likelihoods differ by {worst:e}");
        }
        rows.push(BenchRow {
            components: k,
            flow_seconds,
            classical_seconds,
            speedup: classical_seconds / flow_seconds,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("k,flow_seconds,classical_seconds,speedup\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.3}",
            r.components, r.flow_seconds, r.classical_seconds, r.speedup
        )
        .unwrap();
    }
    out
}

fn cmd_bench_flows(a: &BenchArgs) -> anyhow::Result<()> {
    let c = Circuit::load(&a.circuit)?;
    let d = Dataset::load(&a.data)?;
    let rows = bench_flows(&c, &d, &a.components, a.repeats, a.seed)?;
    let csv = bench_csv(&rows);
    match &a.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> anyhow::Result<()> {
    let c = Circuit::load(&a.circuit)?;
    let v = Vtree::load(&a.vtree)?;
    match v.validate() {
        Ok(()) => println!("vtree ok ({} nodes, {} variables)", v.len(), v.num_vars()),
        Err(e) => bail!("vtree invalid: {e}"),
    }
    let report = check_structure(&c, &v);
    println!("{report}");
    if !report.all() {
        bail!("circuit violates structural properties");
    }
    Ok(())
}
