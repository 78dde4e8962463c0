//! `semcast` command-line entry point.
//!
//! Every subcommand resolves an [`ExperimentConfig`] the same way: built-in
//! defaults, then `--config`, then each `--set KEY=VALUE` in order, then the
//! `SEMCAST_THREADS` environment variable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, Parser, Subcommand};
use semcast::oracle;
use semcast::synthetic::{self, SynthProblem};
use semcast::train::{self, ExperimentConfig, Setup};

const THREADS_ENV: &str = "SEMCAST_THREADS";

#[derive(Parser, Debug)]
#[command(name = "semcast", version, about = "Tri-level RL semantic broadcast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML, or JSON if the file starts with `{`).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied in order after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the encoder, decoders and task weights; writes trace.csv,
    /// config.toml and per-epoch checkpoints under --out.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// SNR sweep of a trained checkpoint; writes eval.csv under --out.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to the latest under --out).
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference checks of every backward pass.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Closed-form descent direction against a brute-force dual search.
    QpSelftest {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1000)]
        kkt_instances: usize,
    },
    /// Tri-level steps on a quadratic problem with a known solution.
    SynthTrilevel {
        #[command(flatten)]
        common: Common,
        /// Number of task weights.
        #[arg(long, default_value_t = 3)]
        tasks: usize,
        /// Encoder parameter count.
        #[arg(long, default_value_t = 6)]
        params: usize,
        #[arg(long, default_value_t = 400)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-2)]
        eta: f64,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Eval { common, .. }
            | Command::Gradcheck { common, .. }
            | Command::QpSelftest { common, .. }
            | Command::SynthTrilevel { common, .. } => common,
        }
    }
}

/// Raised for mistakes in the invocation itself; these print usage.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn resolve_config(common: &Common, fallback: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let mut config = match (&common.config, fallback) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(Usage(format!("config file {} not found", path.display())).into());
            }
            ExperimentConfig::from_file(path).map_err(|e| Usage(e.to_string()))?
        }
        (None, Some(path)) if path.is_file() => {
            log::info!("using config {}", path.display());
            ExperimentConfig::from_file(path)?
        }
        _ => ExperimentConfig::default(),
    };
    for kv in &common.set {
        config.set_override(kv).map_err(|e| Usage(e.to_string()))?;
        log::info!("override {kv}");
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        config
            .set("threads", &v)
            .map_err(|e| Usage(format!("{THREADS_ENV}: {e}")))?;
        log::info!("{THREADS_ENV}={v}");
    }
    config.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = cli.command.common().clone();
    match cli.command {
        Command::Train { .. } => {
            let config = resolve_config(&common, None)?;
            let setup = Setup::new(config)?;
            let outcome = train::train(&setup, &common.out)?;
            let last = outcome.records.last().context("no iterations were run")?;
            println!(
                "trained {} iterations; final reward {:.4}, w = {:?}",
                outcome.records.len(),
                last.reward,
                last.w
            );
            println!("trace: {}", outcome.trace_path.display());
        }
        Command::Eval { checkpoint, .. } => {
            let config = resolve_config(&common, Some(&common.out.join(train::CONFIG_FILE)))?;
            let dir = match checkpoint {
                Some(d) => d,
                None => train::latest_checkpoint(&common.out)
                    .ok_or_else(|| Usage(format!("no checkpoint under {}", common.out.display())))?,
            };
            let setup = Setup::new(config)?;
            let state = train::load_state(&dir, &setup)?;
            let rows = train::evaluate(&setup, &state, &setup.exec())?;
            fs::create_dir_all(&common.out)?;
            let path = common.out.join(train::EVAL_FILE);
            train::write_eval_csv(&path, &rows)?;
            println!("{}", train::eval_header());
            for row in &rows {
                println!("{}", row.to_csv_row());
            }
            println!("eval: {}", path.display());
        }
        Command::Gradcheck { instances, .. } => {
            let config = resolve_config(&common, None)?;
            let checks = oracle::gradcheck_suite(instances, config.seed)?;
            let mut failed = 0;
            for c in &checks {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                println!(
                    "{verdict:<4} {:<28} {} instances, worst rel err {:.3e} (tol {:.0e})",
                    c.name, c.instances, c.worst_rel_err, c.tolerance
                );
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                bail!("{failed} gradient check(s) failed");
            }
        }
        Command::QpSelftest {
            instances, kkt_instances, ..
        } => {
            let config = resolve_config(&common, None)?;
            let r = oracle::qp_selftest(instances, kkt_instances, config.seed)?;
            println!(
                "{}/{} oracle matches (worst L2 {:.3e}); KKT {}/{} (worst residual {:.3e})",
                r.matches, r.instances, r.worst_l2, r.kkt_ok, r.kkt_instances, r.worst_kkt_residual
            );
            if !r.passed() {
                bail!("QP self-test failed");
            }
        }
        Command::SynthTrilevel {
            tasks,
            params,
            iterations,
            eta,
            ..
        } => {
            let config = resolve_config(&common, None)?;
            let problem = SynthProblem::new(tasks, params, config.seed)?;
            let records = synthetic::run_synth_trilevel(&problem, iterations, eta, config.beta)?;
            fs::create_dir_all(&common.out)?;
            let path = common.out.join("synth.csv");
            let mut csv = String::from("iter,upper,psi,g_tilde,lambda\n");
            for r in &records {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.iter, r.upper, r.report.psi, r.report.g_tilde, r.report.lambda
                ));
            }
            fs::write(&path, csv)?;
            let last = records.last().context("no iterations were run")?;
            println!("final g_tilde {:.3e}, upper {:.6}", last.report.g_tilde, last.upper);
            for l in [100, 200, 400].into_iter().filter(|&l| l <= records.len()) {
                println!("min psi over first {l}: {:.3e}", synthetic::min_psi(&records, l));
            }
            println!("trace: {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            if e.downcast_ref::<Usage>().is_some() {
                eprintln!("{}", Cli::command().render_usage());
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

