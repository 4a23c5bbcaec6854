//! `celab`: train, verify, and export from the command line.
//!
//! Exit codes: 0 success, 1 assertion or runtime failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use celab_bench::config::load_config;
use celab_bench::error::{BenchError, Result};
use celab_bench::plot::emit_plot;
use celab_bench::runner::Pipeline;
use celab_bench::verify::{geometry_suite, render_check, skills_suite, theorem_suite, Check};

#[derive(Parser)]
#[command(name = "celab", version, about = "Cross-embodiment tabular RL laboratory")]
struct Cli {
    /// Base RNG seed; overrides the config's [run] seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration file (required by training subcommands).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for metric logs and checkpoints (required by training
    /// subcommands); one directory per run.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the machine's core count. Results do
    /// not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the configured intrinsic-reward policy.
    Pretrain,
    /// Fine-tune the pre-trained policy on the configured task.
    Finetune,
    /// Evaluate the tuned policy on the train (and held-out) embodiments.
    Eval,
    /// Pretrain, fine-tune, and evaluate, resuming completed phases.
    Run,
    /// Check the min-max oracle, identification identities, and
    /// discriminator math on random instances.
    VerifyTheorem,
    /// Check occupancy closed forms and the convex-hull counterexample.
    VerifyGeometry,
    /// Check the skill-information decomposition on random instances.
    VerifySkills,
    /// Run every verification suite.
    Verify,
    /// Write a wide delimiter-separated table of one metric across runs.
    EmitPlot {
        /// Metric name as it appears in the logs, e.g. finetune/return.
        #[arg(long)]
        metric: String,
        /// Output file path.
        #[arg(long)]
        out: PathBuf,
        /// Run directories to join, one column each.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn require(opt: Option<PathBuf>, flag: &'static str) -> Result<PathBuf> {
    opt.ok_or(BenchError::BadSpec { field: flag, message: "required by this subcommand".to_string() })
}

fn pipeline(cli: &Cli) -> Result<Pipeline> {
    let config_path = require(cli.config.clone(), "--config")?;
    let mut config = load_config(&config_path)?;
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    let out_dir = require(cli.out_dir.clone(), "--out-dir")?;
    Pipeline::new(config, &out_dir)
}

fn report_phase(run: &str, phase: &str, ran: bool) {
    if ran {
        println!("run {run}: {phase} completed");
    } else {
        println!("run {run}: {phase} already done");
    }
}

/// Print the checks; true when all passed.
fn report_checks(checks: &[Check]) -> bool {
    let mut all = true;
    for check in checks {
        println!("{}", render_check(check));
        all &= check.pass;
    }
    all
}

fn execute(cli: &Cli) -> Result<bool> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Pretrain => {
            let p = pipeline(cli)?;
            let ran = p.pretrain()?;
            report_phase(&p.run, "pretrain", ran);
            Ok(true)
        }
        Command::Finetune => {
            let p = pipeline(cli)?;
            let ran = p.finetune()?;
            report_phase(&p.run, "finetune", ran);
            Ok(true)
        }
        Command::Eval => {
            let p = pipeline(cli)?;
            let ran = p.eval()?;
            report_phase(&p.run, "eval", ran);
            Ok(true)
        }
        Command::Run => {
            let p = pipeline(cli)?;
            report_phase(&p.run, "pretrain", p.pretrain()?);
            report_phase(&p.run, "finetune", p.finetune()?);
            report_phase(&p.run, "eval", p.eval()?);
            Ok(true)
        }
        Command::VerifyTheorem => Ok(report_checks(&theorem_suite(seed)?)),
        Command::VerifyGeometry => Ok(report_checks(&geometry_suite()?)),
        Command::VerifySkills => Ok(report_checks(&skills_suite(seed)?)),
        Command::Verify => {
            let mut checks = geometry_suite()?;
            checks.extend(theorem_suite(seed)?);
            checks.extend(skills_suite(seed)?);
            Ok(report_checks(&checks))
        }
        Command::EmitPlot { metric, out, runs } => {
            emit_plot(metric, runs, out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Fails only if a pool already exists, which is equally fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn subcommands_parse_with_global_flags() {
        let cli = Cli::parse_from([
            "celab", "run", "--config", "a.cfg", "--out-dir", "out", "--seed", "9",
        ]);
        assert!(matches!(cli.command, Command::Run));
        assert_eq!(cli.seed, Some(9));

        let cli = Cli::parse_from([
            "celab", "emit-plot", "--metric", "finetune/return", "--out", "t.csv", "runs/a",
        ]);
        match cli.command {
            Command::EmitPlot { metric, runs, .. } => {
                assert_eq!(metric, "finetune/return");
                assert_eq!(runs.len(), 1);
            }
            _ => panic!("expected emit-plot"),
        }

        assert!(Cli::try_parse_from(["celab", "emit-plot", "--metric", "m", "--out", "t"]).is_err());
        assert!(Cli::try_parse_from(["celab", "sing"]).is_err());
    }
}
