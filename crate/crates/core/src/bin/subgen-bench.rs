//! `subgen-bench`: seeded SubGen experiments against baseline KV-cache policies.
//!
//! Exit codes: 0 pass, 1 threshold failure, 2 config or runtime error.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use subgen::compress::PolicyKind;
use subgen::harness::experiment::{self, run_experiment, write_report};
use subgen::harness::{distribution_test, parse_seeds, AuditLevel, DistributionKind, PolicySpec, RunConfig};
use subgen::{derive_sizes, AccuracyParams, SizeConstants};

#[derive(Parser)]
#[command(name = "subgen-bench", version, about = "Streaming attention with a sublinear KV cache")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded experiment and write steps.csv, timings.csv, summary.json.
    Run(RunArgs),
    /// Monte Carlo check of a sampling distribution.
    Dist {
        /// sampler | reservoir | single_token
        #[arg(long, default_value = "sampler")]
        kind: DistributionKind,
        #[arg(long, default_value_t = 20_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the reservoir size t and sampler size s for accuracy targets.
    Sizes {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        n_max: f64,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        c_t: f64,
        #[arg(long, default_value_t = 1.0)]
        c_s: f64,
    },
    /// Generate the configured stream for one seed and write it in binary form.
    ExportStream {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults are used for anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed list, e.g. `0..10,42`.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// off | invariants | distributions
    #[arg(long)]
    audit: Option<AuditLevel>,
    /// Baseline policy; repeat to compare several. Replaces the config list.
    #[arg(long)]
    policy: Vec<PolicyKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

enum Failure {
    Threshold,
    Error(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.to_string())
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &args.seed {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(a) = args.audit {
        cfg.audit = a;
    }
    if !args.policy.is_empty() {
        cfg.policies = args.policy.iter().map(|&k| PolicySpec::new(k)).collect();
    }
    if let Some(n) = args.n {
        cfg.stream.n = n;
    }
    if let Some(e) = args.epsilon {
        cfg.accuracy.epsilon = e;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&args)?;
    let report = run_experiment(&cfg)?;
    write_report(&report, &cfg.out)?;

    let s = &report.summary;
    for (name, p) in &s.policies {
        println!(
            "{name:<15} final error p50={:.4} p90={:.4} p99={:.4}  vectors_stored={}..{}",
            p.final_error.p50,
            p.final_error.p90,
            p.final_error.p99,
            p.final_vectors_stored_min,
            p.final_vectors_stored_max
        );
    }
    for c in &s.checks {
        println!(
            "[{}] {}: {} vs {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    if let Some(a) = &s.audit {
        println!(
            "[{}] audit: {} steps, {} violations, max m' = {}",
            if a.passed() { "PASS" } else { "FAIL" },
            a.steps_checked,
            a.violations,
            a.max_m_prime
        );
        if let Some(v) = &a.first {
            println!("       first violation at step {}: {:?} ({})", v.step, v.invariant, v.detail);
        }
    }
    for d in &s.distributions {
        println!(
            "[{}] distribution {:?}: TV = {:.5}",
            if d.pass { "PASS" } else { "FAIL" },
            d.kind,
            d.tv_distance
        );
    }
    if s.query_norm_violations > 0 {
        println!("note: {} queries exceeded the norm bound r", s.query_norm_violations);
    }
    println!("wrote {}", cfg.out.display());
    if s.pass {
        Ok(())
    } else {
        Err(Failure::Threshold)
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Dist { kind, trials, seed } => {
            let r = distribution_test(kind, trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if r.pass {
                Ok(())
            } else {
                Err(Failure::Threshold)
            }
        }
        Command::Sizes {
            epsilon,
            r,
            delta,
            n_max,
            d,
            c_t,
            c_s,
        } => {
            let params = AccuracyParams {
                epsilon,
                r,
                delta,
                n_max,
            };
            let (t, s) = derive_sizes(&params, d, SizeConstants { c_t, c_s })?;
            println!("t = {t}\ns = {s}");
            Ok(())
        }
        Command::ExportStream { config, seed, n, out } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(n) = n {
                cfg.stream.n = n;
            }
            cfg.validate()?;
            let tokens = experiment::stream_for_seed(&cfg, seed)?;
            subgen::streamgen::write_stream(&tokens, BufWriter::new(File::create(&out)?))?;
            println!("wrote {} tokens to {}", tokens.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Threshold) => ExitCode::from(1),
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
