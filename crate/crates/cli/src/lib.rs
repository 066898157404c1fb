//! Command-line driver: configuration, experiment dispatch and manifests.
//!
//! Exit codes: 0 success, 1 experiment-level failure, 2 configuration error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod manifest;
pub mod runner;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dnlspde_core::parallel::WorkerPool;

use crate::config::{parse_config, parse_str, Experiment, RunConfig};
use crate::manifest::{digest_files, now, sha256_hex, RunManifest};
use crate::runner::{run, Artifacts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dnlspde", version, about = "Doubly nonlinear stochastic parabolic equation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "DNLSPDE_WORKERS")]
    workers: Option<usize>,

    /// Base seed, overriding `monte_carlo.base_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Sample-based checks of the coefficient assumptions.
    Validate,
    /// Deterministic controlled equation.
    Skeleton,
    /// Small-noise ensembles over `monte_carlo.eps_list`.
    Simulate,
    /// Rate function and empirical event probabilities.
    Ldp,
    /// Dissipativity, long-run averages and the moment bound.
    Invariant,
    /// Control continuity, time refinement and small-noise convergence.
    Convergence,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Validate => Experiment::Validate,
            Command::Skeleton => Experiment::Skeleton,
            Command::Simulate => Experiment::Simulate,
            Command::Ldp => Experiment::Ldp,
            Command::Invariant => Experiment::Invariant,
            Command::Convergence => Experiment::Convergence,
        }
    }
}

/// Parses arguments, runs the experiment and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let started_at = now();
    let (config_text, loaded) = match &cli.config {
        Some(path) => (std::fs::read(path).unwrap_or_default(), parse_config(path)),
        None => (Vec::new(), parse_str("")),
    };
    let mut manifest = RunManifest {
        config_hash: sha256_hex(&config_text),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: Some(Experiment::from(cli.command).name().to_string()),
        started_at,
        finished_at: String::new(),
        base_seed: None,
        workers: 0,
        status: String::new(),
        exit_code: EXIT_OK,
        errors: Vec::new(),
        files: Vec::new(),
    };

    let mut cfg: RunConfig = match loaded {
        Ok(cfg) => cfg,
        Err(errors) => {
            eprintln!("configuration error:\n{errors}");
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            manifest.errors = errors.0.iter().map(|e| e.to_string()).collect();
            return finish(manifest, &dir, &[], "config_error", EXIT_CONFIG);
        }
    };
    cfg.experiment = cli.command.into();
    if let Some(seed) = cli.seed {
        cfg.monte_carlo.base_seed = seed;
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let workers = cli.workers.or(cfg.monte_carlo.worker_count).unwrap_or(1);
    manifest.base_seed = Some(cfg.monte_carlo.base_seed);
    manifest.workers = workers;

    let pool = match WorkerPool::new(workers) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("configuration error: {e}");
            manifest.errors.push(format!("workers: {e}"));
            return finish(manifest, &dir, &[], "config_error", EXIT_CONFIG);
        }
    };
    let mut artifacts = match Artifacts::new(&dir) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("cannot create {}: {e}", dir.display());
            manifest.errors.push(format!("output directory: {e}"));
            return finish(manifest, &dir, &[], "failed", EXIT_FAILURE);
        }
    };
    let (status, code) = match run(&cfg, &mut artifacts, &pool) {
        Ok(outcome) if outcome.failures.is_empty() => ("ok", EXIT_OK),
        Ok(outcome) => {
            for f in &outcome.failures {
                eprintln!("check failed: {f}");
            }
            manifest.errors = outcome.failures;
            ("failed", EXIT_FAILURE)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            manifest.errors.push(e.to_string());
            ("failed", EXIT_FAILURE)
        }
    };
    let files = artifacts.files().to_vec();
    finish(manifest, &dir, &files, status, code)
}

fn finish(mut manifest: RunManifest, dir: &std::path::Path, files: &[String], status: &str, code: i32) -> i32 {
    match digest_files(dir, files) {
        Ok(d) => manifest.files = d,
        Err(e) => manifest.errors.push(format!("digest: {e}")),
    }
    manifest.status = status.to_string();
    manifest.exit_code = code;
    manifest.finished_at = now();
    if let Err(e) = manifest.write(dir) {
        eprintln!("cannot write manifest: {e}");
    }
    code
}
