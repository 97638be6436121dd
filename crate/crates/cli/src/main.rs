use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use reasoner_core::bench::{demos_for, fit_prior, generate_demos, Bench, BenchReport, RunConfig};
use reasoner_core::reward::{fit_reward, reward_dataset};
use reasoner_core::Error;

#[derive(Parser)]
#[command(name = "reasoner", version, about = "Test-time search over policy actions in a tabletop world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the summary line and informational logs.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Roll out the expert and write demos.jsonl and failures.jsonl.
    GenData,
    /// Fit the action prior and write prior.json.
    FitPrior,
    /// Fit the progress reward and write reward.json.
    FitReward,
    /// Paired baseline vs reasoner benchmark.
    Run,
    SweepAlpha,
    AblateSampling,
    AblateReward,
    SweepModelError,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "info" }))
        .init();

    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let mut config = match read_config(path) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    match dispatch(cli.command, config, &cli.out) {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}

/// Unreadable or unparsable configs are usage errors; bad values inside a
/// well-formed config surface later as domain errors.
fn read_config(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("cannot parse config {}: {e}", path.display()))
}

fn dispatch(command: Command, config: RunConfig, out: &Path) -> Result<String, Error> {
    config.validate()?;
    let names = config.outputs.clone();
    match command {
        Command::GenData => {
            let demos = generate_demos(&config.task, config.data.n_demos, config.seed)?;
            let (kept, failed) = demos.write(out, &names)?;
            Ok(format!(
                "kept {}/{} demos: {} {}",
                demos.kept.len(),
                demos.attempted(),
                kept.display(),
                failed.display()
            ))
        }
        Command::FitPrior => {
            let demos = demos_for(&config)?;
            let prior = fit_prior(&demos, config.policy.chunk_len, config.data.bandwidth)?;
            if prior.used_fallback() {
                log::warn!("bandwidth rule degenerate on this data; fell back to the minimum bandwidth");
            }
            let path = write_artifact(out, &names.prior, prior.to_json()?)?;
            Ok(format!("prior h={:.6} n={}: {}", prior.bandwidth(), prior.points().len(), path.display()))
        }
        Command::FitReward => {
            let demos = demos_for(&config)?;
            let data = reward_dataset(&demos, config.data.stride)?;
            let fit = fit_reward(config.task.kind_name(), &data, config.data.ridge_lambda)?;
            let path = write_artifact(out, &names.reward, fit.model.to_json()?)?;
            Ok(format!("reward mse={:.6} frames={}: {}", fit.train_mse, data.len(), path.display()))
        }
        _ => {
            let bench = Bench::prepare(config)?;
            let cfg = bench.config().clone();
            info!("running {} episodes per arm", cfg.n_episodes);
            let report: BenchReport = match command {
                Command::Run => bench.run_benchmark()?,
                Command::SweepAlpha => bench.sweep_alpha(&cfg.alphas)?,
                Command::AblateSampling => bench.ablate_sampling()?,
                Command::AblateReward => bench.ablate_reward()?,
                Command::SweepModelError => bench.sweep_model_error(&cfg.epsilons)?,
                _ => unreachable!(),
            };
            let (json, csv) = report.write(out, &names)?;
            info!("wrote {} and {} in {:.1}s", json.display(), csv.display(), report.wall_time);
            Ok(report.summary_line())
        }
    }
}

fn write_artifact(dir: &Path, name: &str, body: String) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body + "\n")?;
    Ok(path)
}
