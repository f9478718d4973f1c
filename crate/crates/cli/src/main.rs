//! `spectra` experiment driver.
//!
//! Every command reads one JSON configuration, runs each configured seed and
//! writes its outputs under `output_dir/seed_<s>/`. Failures end with a
//! single JSON line on stderr and a nonzero exit code.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN

mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use spectra::io::write_atomic;
use spectra::trace::format_value;

use config::{AlgorithmSection, ExperimentConfig, Knob};
use pipeline::{evaluate, metric_names, profiles, run_cell, seed_dir, seed_report, Data};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or parameters (exit 1).
    Validation(String),
    /// The iteration blew up (exit 2).
    Divergence(String),
    /// Missing input or unwritable output (exit 3).
    Io(String),
    /// Solver failure on a valid input (exit 4).
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Divergence(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Divergence(_) => "divergence",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Divergence(m) | CliError::Io(m) | CliError::Numerical(m) => m,
        }
    }

    /// Converts a run error, keeping the partial trace of a divergence so the
    /// caller can persist it.
    pub fn from_run(e: spectra::Error, trace_name: &str) -> CliError {
        if let spectra::Error::Divergence { trace: Some(trace), .. } = &e {
            PARTIAL.with(|p| *p.borrow_mut() = Some((trace_name.to_string(), trace.to_csv_string())));
        }
        e.into()
    }
}

thread_local! {
    /// Trace recorded before the most recent divergence on this thread.
    static PARTIAL: std::cell::RefCell<Option<(String, String)>> = const { std::cell::RefCell::new(None) };
}

impl From<spectra::Error> for CliError {
    fn from(e: spectra::Error) -> Self {
        use spectra::Error as E;
        let msg = e.to_string();
        match e {
            E::Divergence { .. } => CliError::Divergence(msg),
            E::Io(_) => CliError::Io(msg),
            E::Degenerate { .. } | E::Indistinguishable { .. } | E::NoConvergence { .. } | E::ZeroNorm | E::EmptyGraph => {
                CliError::Numerical(msg)
            }
            _ => CliError::Validation(msg),
        }
    }
}

#[derive(Parser)]
#[command(name = "spectra", version, about = "Spectral user profiling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Log errors only.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the graph or rating matrix and its class labels.
    Generate(Common),
    /// Compute user profiles with the configured algorithm.
    Embed(Common),
    /// Run the synchronous distributed iteration and write its trace.
    Sync(Common),
    /// Run the event-driven simulation and write its trace.
    Async(Common),
    /// Run the full pipeline and write a JSON report.
    Evaluate(Common),
    /// Repeat the pipeline over values of one knob and aggregate the metrics.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Knob to vary; defaults to the config's `sweep.knob`.
        #[arg(long, value_enum)]
        knob: Option<Knob>,
        /// Comma-separated values; defaults to the config's `sweep.values`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return fail(&CliError::Validation(e.kind().to_string()));
        }
    };
    let common = match &cli.command {
        Command::Generate(c) | Command::Embed(c) | Command::Sync(c) | Command::Async(c) | Command::Evaluate(c) => c,
        Command::Sweep { common, .. } => common,
    };
    let level = if common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

/// Prints the one-line JSON error record and maps it to the exit code.
fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": e.kind(), "code": e.code(), "message": e.message() }));
    ExitCode::from(e.code())
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Generate(c) => {
            let cfg = load(c)?;
            for &s in &cfg.seeds {
                let dir = seed_dir(&cfg.output_dir, s);
                let data = Data::generate(&cfg, s)?;
                data.write(&dir)?;
                log::info!("seed {s}: {} edges written to {}", data.graph().n_edges(), dir.display());
            }
            Ok(())
        }
        Command::Embed(c) => embed_all(&load(c)?),
        Command::Sync(c) => {
            let cfg = load(c)?;
            require(matches!(cfg.algorithm, AlgorithmSection::Sync(_)), "sync")?;
            embed_all(&cfg)
        }
        Command::Async(c) => {
            let cfg = load(c)?;
            require(matches!(cfg.algorithm, AlgorithmSection::Async(_)), "async")?;
            embed_all(&cfg)
        }
        Command::Evaluate(c) => evaluate_all(&load(c)?),
        Command::Sweep { common, knob, values } => {
            let cfg = load(common)?;
            let knob = knob.or(cfg.sweep.as_ref().map(|s| s.knob));
            let values = values.clone().or(cfg.sweep.as_ref().map(|s| s.values.clone()));
            match (knob, values) {
                (Some(k), Some(v)) if !v.is_empty() => sweep(&cfg, k, &v),
                _ => Err(CliError::Validation("sweep needs a knob and at least one value (flags or `sweep` section)".into())),
            }
        }
    }
}

fn require(ok: bool, kind: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Validation(format!("the {kind} command needs algorithm.kind = \"{kind}\"")))
    }
}

/// Persists the trace recorded before a divergence, then passes the error on.
fn keep_partial(dir: &Path, e: CliError) -> CliError {
    if let Some((name, csv)) = PARTIAL.with(|p| p.borrow_mut().take()) {
        if let Err(w) = write_atomic(&dir.join(&name), csv.as_bytes()) {
            log::error!("could not save partial trace: {w}");
        } else {
            log::warn!("partial trace saved to {}", dir.join(name).display());
        }
    }
    e
}

fn embed_all(cfg: &ExperimentConfig) -> Result<(), CliError> {
    for &s in &cfg.seeds {
        let dir = seed_dir(&cfg.output_dir, s);
        let data = Data::generate(cfg, s)?;
        let p = profiles(cfg, &data, s).map_err(|e| keep_partial(&dir, e))?;
        p.write(&dir)?;
        log::info!("seed {s}: {} profiles written to {}", p.nodes.len(), dir.display());
    }
    Ok(())
}

fn evaluate_all(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let names = metric_names(cfg);
    let mut per_seed = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &s in &cfg.seeds {
        let dir = seed_dir(&cfg.output_dir, s);
        let data = Data::generate(cfg, s)?;
        let (p, e) = evaluate(cfg, &data, s).map_err(|e| keep_partial(&dir, e))?;
        p.write(&dir)?;
        if let Some((name, csv)) = &e.extra_csv {
            write_atomic(&dir.join(name), csv.as_bytes())?;
        }
        let report = seed_report(cfg, &data, s, &p, &e);
        write_atomic(&dir.join("report.json"), pretty(&report).as_bytes())?;
        let all: Vec<(&str, f64)> = p.metrics.iter().chain(&e.metrics).copied().collect();
        rows.push(names.iter().map(|n| all.iter().find(|(m, _)| m == n).map_or(f64::NAN, |(_, v)| *v)).collect());
        log::info!("seed {s}: {}", all.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" "));
        per_seed.push(report);
    }
    let summary: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let (mean, sd) = mean_sd(rows.iter().map(|r| r[i]));
            (n.to_string(), json!({ "mean": mean, "sd": sd }))
        })
        .collect();
    let report = json!({ "config": cfg, "seeds": per_seed, "summary": summary });
    write_atomic(&cfg.output_dir.join("report.json"), pretty(&report).as_bytes())?;
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Mean and sample standard deviation of the finite entries.
fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

fn worker_count() -> Result<Option<usize>, CliError> {
    match std::env::var("SPECTRA_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Validation(format!("SPECTRA_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn sweep(cfg: &ExperimentConfig, knob: Knob, values: &[f64]) -> Result<(), CliError> {
    let cells: Vec<(f64, ExperimentConfig, u64)> = values
        .iter()
        .map(|&v| cfg.with_knob(knob, v).map(|c| (v, c)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flat_map(|(v, c)| cfg.seeds.iter().map(move |&s| (v, c.clone(), s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Validation(format!("worker pool: {e}")))?;
    let names = metric_names(cfg);
    let results: Vec<Result<Option<Vec<f64>>, CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|(v, c, s)| match run_cell(c, *s) {
                Ok(m) => Ok(Some(m)),
                Err(CliError::Divergence(msg)) => {
                    PARTIAL.with(|p| p.borrow_mut().take());
                    log::warn!("{}={v} seed {s} diverged: {msg}", knob.name());
                    Ok(None)
                }
                Err(e) => Err(e),
            })
            .collect()
    });
    let results: Vec<Option<Vec<f64>>> = results.into_iter().collect::<Result<_, _>>()?;

    let mut cell_csv = format!("{},seed,diverged,{}\n", knob.name(), names.join(","));
    for ((v, _, s), r) in cells.iter().zip(&results) {
        let metrics = r.clone().unwrap_or_else(|| vec![f64::NAN; names.len()]);
        let fields: Vec<String> = metrics.iter().map(|m| format_value(*m)).collect();
        cell_csv.push_str(&format!("{},{s},{},{}\n", format_value(*v), u8::from(r.is_none()), fields.join(",")));
    }
    let mut header = vec![knob.name().to_string(), "seeds".into(), "diverged".into()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_sd"));
    }
    let mut agg_csv = header.join(",") + "\n";
    for &v in values {
        let rows: Vec<&Option<Vec<f64>>> = cells.iter().zip(&results).filter(|((cv, _, _), _)| *cv == v).map(|(_, r)| r).collect();
        let ok: Vec<&Vec<f64>> = rows.iter().filter_map(|r| r.as_ref()).collect();
        let mut fields = vec![format_value(v), ok.len().to_string(), (rows.len() - ok.len()).to_string()];
        for i in 0..names.len() {
            let (mean, sd) = mean_sd(ok.iter().map(|r| r[i]));
            fields.push(format_value(mean));
            fields.push(format_value(sd));
        }
        agg_csv.push_str(&(fields.join(",") + "\n"));
    }
    write_atomic(&cfg.output_dir.join("sweep_cells.csv"), cell_csv.as_bytes())?;
    write_atomic(&cfg.output_dir.join("sweep.csv"), agg_csv.as_bytes())?;
    log::info!("{} cells written to {}", cells.len(), cfg.output_dir.join("sweep.csv").display());
    Ok(())
}
