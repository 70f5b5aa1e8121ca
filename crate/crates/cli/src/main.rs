use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use maxent_sac::agent::SacAgent;
use maxent_sac::env::make_env;
use maxent_sac::train::{emit_curves, evaluate, resume, train, RunRecord, TrainConfig};
use maxent_sac::verify::{run_suite, Suite};

/// Soft actor-critic training, evaluation and verification.
#[derive(Parser, Debug)]
#[command(name = "maxent-sac", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an agent from a JSON run configuration.
    Train {
        /// Run configuration (JSON, unknown keys rejected).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to `$MAXENT_SAC_OUT/<env>-seed<N>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from `<run>/checkpoints/step_<N>` instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a saved agent with deterministic actions.
    Eval {
        /// Agent checkpoint base path (without `.bin` / `.json`).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 1_000_000)]
        seed: u64,
        /// Environment parameter overrides as JSON.
        #[arg(long)]
        env_params: Option<String>,
    },
    /// Write the learning curve of a run directory as CSV.
    Curves {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run property suites: theory, gradients, density or all.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        /// Print the report as JSON instead of one line per check.
        #[arg(long)]
        json: bool,
    },
}

/// Run directory root used when `--out` is absent.
const OUT_ENV: &str = "MAXENT_SAC_OUT";
/// Log filter, in `env_logger` syntax.
const LOG_ENV: &str = "MAXENT_SAC_LOG";

fn default_out(config: &TrainConfig) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-seed{}", config.env.name, config.seed))
}

fn report_run(record: &RunRecord, out: &Path) -> Result<()> {
    let curves = out.join("curves.csv");
    emit_curves(record, &curves).with_context(|| format!("writing {}", curves.display()))?;
    if let Some(e) = record.final_eval() {
        println!(
            "final eval at step {}: mean return {} (min {}, max {}), alpha {}",
            e.env_step, e.summary.mean_return, e.summary.min_return, e.summary.max_return, e.alpha
        );
    }
    if let Some(h) = record.final_quartile_entropy() {
        println!("final-quartile entropy estimate: {h}");
    }
    println!("run written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume: checkpoint,
        } => {
            if let Some(ckpt) = checkpoint {
                let out = out.context("--out is required with --resume")?;
                let (_, record) =
                    resume(&ckpt, Some(&out)).with_context(|| format!("resuming from {}", ckpt.display()))?;
                report_run(&record, &out)?;
                return Ok(ExitCode::SUCCESS);
            }
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = TrainConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(|| default_out(&cfg));
            let (_, record) = train(&cfg, Some(&out)).context("training failed")?;
            report_run(&record, &out)?;
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            env_params,
        } => {
            let agent = SacAgent::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let params = match env_params {
                Some(p) => serde_json::from_str(&p).context("parsing --env-params")?,
                None => serde_json::Value::Null,
            };
            let mut env = make_env(&env, &params)?;
            let summary = evaluate(&agent, env.as_mut(), episodes, seed)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Curves { run, out } => {
            let record = RunRecord::load(&run).with_context(|| format!("reading run {}", run.display()))?;
            emit_curves(&record, &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Verify { suite, json } => {
            let suite: Suite = suite.parse()?;
            let report = run_suite(suite)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            if !report.passed() {
                bail!("{} of {} checks failed", report.checks.iter().filter(|c| !c.passed).count(), report.checks.len());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
