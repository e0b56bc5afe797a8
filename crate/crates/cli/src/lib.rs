//! The `gjn` command line: subcommand definitions and their implementations.

#![allow(clippy::needless_range_loop)]

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use gjn_core::batch::{run_batch, try_run_batch};
use gjn_core::config::{ConfigError, RunConfig};
use gjn_core::dcftp::naive_steady_state_sim;
use gjn_core::network::{build_auxiliary, check_stability, solve_flow, AuxiliaryOptions, TABLE1_LAMBDAS};
use gjn_core::oracle_stats::{summarize, write_histogram_csv, OracleError, Table1Report};
use gjn_core::rng::sample_seed;
use gjn_core::{CoalescenceRecord, NetworkSpec, ProductFormOracle, SamplerContext, SamplerError, SamplerOptions, StationaryNetworkState};

#[derive(Debug, Parser)]
#[command(name = "gjn", version, about = "Exact stationary samples of generalized Jackson networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print flow rates, utilisations, stability and the auxiliary rates.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw exact stationary samples as JSON lines.
    Sample(SampleArgs),
    /// Summarise a JSON-lines sample file.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Per-station summary CSV.
        #[arg(long)]
        out: PathBuf,
        /// Joint-count histogram CSV.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Run the five built-in reference networks and print the comparison table.
    Table1 {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write per-column summaries as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward simulation from empty with burn-in (approximate).
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1_000.0)]
        burn_in: f64,
        #[arg(long, default_value_t = 100_000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 10.0)]
        spacing: f64,
        /// JSON lines of `{y}`; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Number of samples; overrides `batch.n`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Master seed; overrides `batch.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; overrides `output.samples`, stdout when neither is set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write walk, Ȳ′ and vacation-system traces of one sample to this directory.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Index of the traced sample.
    #[arg(long, default_value_t = 0, requires = "trace")]
    pub trace_index: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}, line {line}: {message}")]
    Input { path: String, line: usize, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("network is unstable at station {}", .0.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(", "))]
    Unstable(Vec<usize>),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One line of `sample` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub y: Vec<u64>,
    pub residual_service: Vec<f64>,
    pub residual_arrival: Vec<Option<f64>>,
    pub tau: f64,
    pub rounds: u32,
    pub draws: u64,
}

impl SampleLine {
    pub fn new(state: StationaryNetworkState, record: &CoalescenceRecord) -> Self {
        SampleLine {
            y: state.y,
            residual_service: state.residual_service,
            residual_arrival: state.residual_arrival,
            tau: record.tau,
            rounds: record.rounds,
            draws: record.draws,
        }
    }
}

#[derive(Deserialize)]
struct StateOnly {
    y: Vec<u64>,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_to(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => validate(&RunConfig::load(&config)?, out),
        Command::Sample(args) => sample(args, out),
        Command::Analyze {
            input,
            config,
            out: csv,
            histogram,
        } => analyze(&input, &RunConfig::load(&config)?, &csv, histogram.as_deref(), out),
        Command::Table1 { n, seed, workers, out: csv } => table1(n, seed, workers, csv.as_deref(), out),
        Command::Baseline {
            config,
            seed,
            burn_in,
            horizon,
            spacing,
            out: path,
        } => {
            let cfg = RunConfig::load(&config)?;
            let seed = seed.or(cfg.batch.seed).ok_or_else(|| CliError::Usage("a seed is required (--seed or batch.seed)".into()))?;
            let ys = naive_steady_state_sim(&cfg.network, burn_in, horizon, spacing, seed)?;
            let mut w = open_out(path.as_deref())?;
            let p = path.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
            for y in &ys {
                writeln!(w, "{}", serde_json::json!({ "y": y })).map_err(io_err(&p))?;
            }
            w.flush().map_err(io_err(&p))?;
            log::info!("{} baseline observations", ys.len());
            Ok(())
        }
    }
}

fn validate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = &cfg.network;
    let flow = solve_flow(spec).map_err(SamplerError::from)?;
    let report = check_stability(spec, &flow);
    let mu = spec.mu();
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_err(Path::new("<stdout>")));
    w(out, format!("stations: {}", spec.d()))?;
    for i in 0..spec.d() {
        w(out, format!("station {}: phi={:.6} mu={:.6} rho={:.6}", i + 1, flow.phi[i], mu[i], flow.rho[i]))?;
    }
    if !report.stable {
        for i in &report.violating {
            w(out, format!("UNSTABLE station {}: phi={:.6} >= mu={:.6}", i + 1, flow.phi[*i], mu[*i]))?;
        }
        return Err(CliError::Unstable(report.violating));
    }
    w(out, "stable: yes".into())?;
    let aux = build_auxiliary(
        spec,
        &flow,
        &AuxiliaryOptions {
            delta_frac: cfg.sampler.delta_frac,
            deltabar_frac: cfg.sampler.deltabar_frac,
        },
    )
    .map_err(SamplerError::from)?;
    w(out, format!("delta={:.6} deltabar={:.6}", aux.delta, aux.deltabar))?;
    let a: Vec<String> = aux.a.iter().map(|x| format!("{x:.6}")).collect();
    w(out, format!("a=[{}]", a.join(", ")))?;
    let ctx = SamplerContext::new(spec, &cfg.sampler)?;
    w(out, format!("milestone m={:.6} block C_T={:.6}", ctx.kernel.tilt.m, ctx.block_length))?;
    Ok(())
}

fn sample(args: SampleArgs, report: &mut dyn Write) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let n = args.n.or(cfg.batch.n).ok_or_else(|| CliError::Usage("sample count required (--n or batch.n)".into()))?;
    let seed = args.seed.or(cfg.batch.seed).ok_or_else(|| CliError::Usage("a seed is required (--seed or batch.seed)".into()))?;
    let workers = args.workers.or(cfg.batch.workers);
    if workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let ctx = SamplerContext::new(&cfg.network, &cfg.sampler)?;
    let results = run_batch(&ctx, n, seed, workers);
    let path = args.out.clone().or(cfg.output.samples.clone());
    let mut w = open_out(path.as_deref())?;
    let shown = path.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut states = Vec::with_capacity(n);
    for r in results {
        let (state, record) = r?;
        states.push(state.y.clone());
        let line = serde_json::to_string(&SampleLine::new(state, &record)).expect("sample serializes");
        writeln!(w, "{line}").map_err(io_err(&shown))?;
    }
    w.flush().map_err(io_err(&shown))?;
    if let Some(p) = &cfg.output.histogram {
        write_to(p, |w| write_histogram_csv(&states, w))?;
    }
    if let Some(p) = &cfg.output.summary {
        if states.len() >= 2 {
            let oracle = ProductFormOracle::new(&cfg.network).ok();
            let s = summarize(&states, oracle.as_ref())?;
            write_to(p, |w| s.write_csv(w))?;
        }
    }
    if let Some(dir) = &args.trace {
        write_traces(&ctx, sample_seed(seed, args.trace_index as u64), dir)?;
        writeln!(report, "traces of sample {} written to {}", args.trace_index, dir.display()).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Walk milestones, Ȳ′/X̄/Z path and vacation-system events of the final
/// round of one sample.
pub fn write_traces(ctx: &SamplerContext, seed: u64, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (_, record) = ctx.sample(seed)?;
    let (mut run, path, traj) = ctx.window(seed, record.horizon);
    write_to(&dir.join("walk.csv"), |w| run.queue().walk().write_debug_csv(w))?;
    write_to(&dir.join("autonomous.csv"), |w| run.queue_mut().write_debug_csv(&path, w))?;
    write_to(&dir.join("vacation.txt"), |w| traj.write_trace(w))?;
    Ok(())
}

/// Reads the `y` field of every JSON line.
pub fn read_states(path: &Path) -> Result<Vec<Vec<u64>>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: StateOnly = serde_json::from_str(&line).map_err(|e| CliError::Input {
            path: path.display().to_string(),
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(s.y);
    }
    Ok(out)
}

fn analyze(input: &Path, cfg: &RunConfig, csv: &Path, histogram: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let states = read_states(input)?;
    let d = cfg.network.d();
    if let Some((k, s)) = states.iter().enumerate().find(|(_, s)| s.len() != d) {
        return Err(CliError::Input {
            path: input.display().to_string(),
            line: k + 1,
            message: format!("state has {} stations, config has {d}", s.len()),
        });
    }
    let oracle = match ProductFormOracle::new(&cfg.network) {
        Ok(o) => Some(o),
        Err(OracleError::NotMarkovian) => None,
        Err(e) => return Err(e.into()),
    };
    let summary = summarize(&states, oracle.as_ref())?;
    write_to(csv, |w| summary.write_csv(w))?;
    if let Some(h) = histogram {
        write_to(h, |w| write_histogram_csv(&states, w))?;
    }
    let shown = Path::new("<stdout>");
    for (i, s) in summary.stations.iter().enumerate() {
        let truth = s.oracle_mean.map_or(String::new(), |m| format!(" (oracle {m:.4})"));
        writeln!(out, "E[Y{}] = {:.4} ± {:.4}{truth}", i + 1, s.mean, s.half_width).map_err(io_err(shown))?;
    }
    if let Some((r, p)) = summary.correlation {
        writeln!(out, "pearson r = {r:.4}, p = {p:.4}").map_err(io_err(shown))?;
    }
    Ok(())
}

fn table1(n: usize, seed: u64, workers: Option<usize>, csv: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    if n < 2 {
        return Err(CliError::Usage("--n must be at least 2".into()));
    }
    let mut per_column = Vec::with_capacity(TABLE1_LAMBDAS.len());
    for c in 0..TABLE1_LAMBDAS.len() {
        let ctx = SamplerContext::new(&NetworkSpec::table1_column(c), &SamplerOptions::default())?;
        // Each column gets its own master seed so columns are independent.
        let samples = try_run_batch(&ctx, n, sample_seed(seed, c as u64), workers)?;
        log::info!("column {} done", c + 1);
        per_column.push(samples.into_iter().map(|(s, _)| s.y).collect::<Vec<_>>());
    }
    let report = Table1Report::from_samples(&per_column)?;
    write!(out, "{}", report.render()).map_err(io_err(Path::new("<stdout>")))?;
    if let Some(p) = csv {
        write_to(p, |w| {
            writeln!(w, "column,lambda1,lambda2,station,mean,ci_half_width,true_mean,covers,pearson_r,pearson_p")?;
            for (c, col) in report.columns.iter().enumerate() {
                for (i, s) in col.summary.stations.iter().enumerate() {
                    let (r, p) = col.summary.correlation.unwrap_or((f64::NAN, f64::NAN));
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{r},{p}",
                        c + 1,
                        col.lambda[0],
                        col.lambda[1],
                        i + 1,
                        s.mean,
                        s.half_width,
                        s.oracle_mean.unwrap_or(f64::NAN),
                        s.covers.unwrap_or(false),
                    )?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}
