//! Command-line front end: instance generation, tour evaluation and solving.

use std::fs::OpenOptions;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pnb_core::instance::{load_csv_with_origin, InstanceError};
use pnb_core::solver::{SolveError, TraceEvent};
use pnb_core::transfer::CallCounts;
use pnb_core::{
    evaluate_tour, generate, write_csv, Instance, PeelAndBound, PeelStrategy, QueueOrder, SolutionTrie,
    SolverConfig, Tour,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "pnb", version, about = "Peel-and-Bound solver for asteroid routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic instance as CSV.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Print the cost of one tour.
    Eval {
        #[arg(long)]
        instance: PathBuf,
        /// Visiting order starting at Earth, e.g. `0,3,1,2`.
        #[arg(long)]
        tour: String,
        #[arg(long, default_value_t = 1)]
        multi: u32,
        /// Subtracted from every element epoch (days); use for absolute epochs.
        #[arg(long, default_value_t = 0.0)]
        epoch_origin: f64,
    },
    /// Solve an instance to optimality or until the time limit.
    Solve(SolveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeelArg {
    Maximal,
    LastExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueueArg {
    WorstBound,
    Dfs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Text,
    Records,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// CSV instance; mutually exclusive with `--n`.
    #[arg(long, conflicts_with = "n")]
    pub instance: Option<PathBuf>,
    /// Size of a synthetic instance.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Subtracted from every element epoch of `--instance` (days).
    #[arg(long, default_value_t = 0.0)]
    pub epoch_origin: f64,
    #[arg(long, default_value_t = 2048)]
    pub dd_width: usize,
    #[arg(long, default_value_t = 400)]
    pub search_width: usize,
    #[arg(long, default_value_t = 1)]
    pub multi: u32,
    #[arg(long, value_enum, default_value = "maximal")]
    pub peel: PeelArg,
    #[arg(long, value_enum, default_value = "worst-bound")]
    pub queue: QueueArg,
    /// Seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub est_eat: bool,
    /// Line-delimited JSON bound records.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

impl SolveArgs {
    pub fn config(&self) -> Result<SolverConfig, CliError> {
        if let Some(t) = self.time_limit {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(CliError::Usage("--time-limit must be a non-negative number".into()));
            }
        }
        if self.dd_width == 0 || self.search_width == 0 || self.multi == 0 {
            return Err(CliError::Usage("widths and --multi must be at least 1".into()));
        }
        Ok(SolverConfig {
            dd_width: self.dd_width,
            search_width: self.search_width,
            multi: self.multi,
            peel: match self.peel {
                PeelArg::Maximal => PeelStrategy::Maximal,
                PeelArg::LastExact => PeelStrategy::LastExact,
            },
            queue: match self.queue {
                QueueArg::WorstBound => QueueOrder::WorstBound,
                QueueArg::Dfs => QueueOrder::Dfs,
            },
            time_limit: self.time_limit,
            enable_est_eat: self.est_eat,
            ..SolverConfig::default()
        })
    }

    fn load(&self) -> Result<Instance, CliError> {
        match (&self.instance, self.n) {
            (Some(path), _) => Ok(load_csv_with_origin(path, self.epoch_origin)?),
            (None, Some(n)) => {
                if n == 0 {
                    return Err(CliError::Usage("--n must be at least 1".into()));
                }
                Ok(generate(n, self.seed)?)
            }
            (None, None) => Err(CliError::Usage("pass --instance or --n".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub n: usize,
    pub lb: f64,
    pub ub: f64,
    pub gap_percent: f64,
    pub tour: String,
    pub proven_optimal: bool,
    pub queue_remaining: usize,
    pub iterations: u64,
    pub wall_seconds: f64,
    pub counts: CallCounts,
    /// Relaxed calls made after construction.
    pub post_build_relaxed_calls: u64,
    pub searches: u64,
    /// Most black-box calls spent by a single embedded search.
    pub max_search_evaluations: u64,
    pub config: SolverConfig,
}

/// Relative gap in percent of the upper bound.
pub fn gap_percent(lb: f64, ub: f64) -> f64 {
    if !ub.is_finite() || ub <= 0.0 {
        return if lb >= ub { 0.0 } else { 100.0 };
    }
    (100.0 * (ub - lb) / ub).max(0.0)
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        format!(
            "n            {}\nlb           {:.6}\nub           {:.6}\ngap (%)      {:.4}\ntour         {}\noptimal      {}\nqueue        {}\niterations   {}\ntime (s)     {:.3}\nB calls      {}\nB' calls     {}\n",
            self.n,
            self.lb,
            self.ub,
            self.gap_percent,
            self.tour,
            self.proven_optimal,
            self.queue_remaining,
            self.iterations,
            self.wall_seconds,
            self.counts.b,
            self.counts.b_relaxed,
        )
    }
}

#[derive(Serialize)]
struct TraceRecord {
    t_wall: f64,
    lb: f64,
    ub: f64,
    queue_len: usize,
    b_calls: u64,
    bprime_calls: u64,
}

impl From<&TraceEvent> for TraceRecord {
    fn from(e: &TraceEvent) -> Self {
        Self {
            t_wall: e.t_wall,
            lb: e.lb,
            ub: e.ub,
            queue_len: e.queue_len,
            b_calls: e.b_calls,
            bprime_calls: e.bprime_calls,
        }
    }
}

pub fn cmd_gen(n: usize, seed: u64, out: &Path, force: bool) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if out.exists() && !force {
        return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", out.display())));
    }
    let inst = generate(n, seed)?;
    write_csv(&inst, out)?;
    Ok(())
}

pub fn cmd_eval(instance: &Path, tour: &str, multi: u32, epoch_origin: f64) -> Result<f64, CliError> {
    if multi == 0 {
        return Err(CliError::Usage("--multi must be at least 1".into()));
    }
    let inst = load_csv_with_origin(instance, epoch_origin)?;
    let tour = Tour::parse(tour)?;
    let model = inst.model();
    let mut trie = SolutionTrie::new(multi);
    Ok(evaluate_tour(&model, &tour, &mut trie)?)
}

/// Runs the solver, streaming trace records to `--trace-out` as they appear.
pub fn cmd_solve(args: &SolveArgs) -> Result<RunSummary, CliError> {
    let config = args.config()?;
    let inst = args.load()?;
    let model = inst.model();
    let mut trace = match &args.trace_out {
        Some(path) => {
            let f = OpenOptions::new().write(true).create(true).truncate(true).open(path).map_err(io_err(path))?;
            Some((BufWriter::new(f), path.clone()))
        }
        None => None,
    };
    let mut written = 0;
    let mut flush = |events: &[TraceEvent]| -> Result<(), CliError> {
        if let Some((w, path)) = trace.as_mut() {
            for e in &events[written..] {
                let line = serde_json::to_string(&TraceRecord::from(e)).expect("plain record");
                writeln!(w, "{line}").map_err(io_err(path))?;
                w.flush().map_err(io_err(path))?;
            }
        }
        written = events.len();
        Ok(())
    };
    let mut solver = PeelAndBound::new(&model, config.clone())?;
    flush(solver.trace())?;
    while solver.step().is_some() {
        flush(solver.trace())?;
    }
    let out = solver.finish();
    flush(&out.trace)?;
    Ok(RunSummary {
        n: inst.n(),
        lb: out.lb,
        ub: out.cost,
        gap_percent: gap_percent(out.lb, out.cost),
        tour: out.tour.to_string(),
        proven_optimal: out.proven_optimal,
        queue_remaining: out.queue_remaining,
        iterations: out.iterations,
        wall_seconds: out.wall_seconds,
        counts: out.counts,
        post_build_relaxed_calls: out.post_build_relaxed_calls,
        searches: out.searches,
        max_search_evaluations: out.max_search_evaluations,
        config,
    })
}

/// Executes a parsed command, printing to `out`. Returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let stdout = Path::new("<stdout>");
    match &cli.command {
        Command::Gen { n, seed, out: path, force } => {
            cmd_gen(*n, *seed, path, *force)?;
            writeln!(out, "wrote {} asteroids to {}", n, path.display()).map_err(io_err(stdout))?;
            Ok(0)
        }
        Command::Eval { instance, tour, multi, epoch_origin } => {
            let cost = cmd_eval(instance, tour, *multi, *epoch_origin)?;
            writeln!(out, "{cost}").map_err(io_err(stdout))?;
            Ok(0)
        }
        Command::Solve(args) => {
            let summary = cmd_solve(args)?;
            match args.format {
                Format::Text => write!(out, "{}", summary.to_text()),
                Format::Records => {
                    writeln!(out, "{}", serde_json::to_string(&summary).expect("plain record"))
                }
            }
            .map_err(io_err(stdout))?;
            Ok(if summary.proven_optimal { 0 } else { 2 })
        }
    }
}
