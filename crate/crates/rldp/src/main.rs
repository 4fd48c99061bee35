use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rldp::cli;
use rldp::config::RunConfig;

/// Zero-shot RL pipeline: pretrain state features on reward-free data, train
/// a successor-feature model over them, infer task embeddings from rewards,
/// and export diagnostics -- all from one config file.
#[derive(Parser)]
#[command(name = "rldp", version, about)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the root seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Re-root relative paths from the config under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reward-free offline dataset.
    GenData(Common),
    /// Pretrain the state encoder on the dataset.
    Pretrain(Common),
    /// Train the successor-feature critic and actor on frozen features.
    TrainBfm(Common),
    /// Infer task embeddings for the configured rewards and evaluate.
    Eval(Common),
    /// Export heatmaps, the bound report, embeddings, and collapse metrics.
    Diag(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::Pretrain(c)
            | Command::TrainBfm(c)
            | Command::Eval(c)
            | Command::Diag(c) => c,
        }
    }
}

fn load_config(common: &Common) -> rldp::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.reroot(out);
    }
    Ok(cfg)
}

fn run(args: CliArgs) -> rldp::Result<()> {
    let cfg = load_config(args.command.common())?;
    match &args.command {
        Command::GenData(c) => {
            let outcome = cli::cmd_gen_data(&cfg, c.force)?;
            println!(
                "wrote {} ({} transitions, {} episodes, coverage {:.3})",
                cfg.paths.dataset.display(),
                outcome.transitions,
                outcome.episodes,
                outcome.coverage
            );
        }
        Command::Pretrain(_) => {
            let outcome = cli::cmd_pretrain(&cfg)?;
            println!(
                "wrote {} ({} steps, final probe cosine {:.4})",
                cfg.encoder_checkpoint().display(),
                outcome.steps,
                outcome.final_cosine
            );
        }
        Command::TrainBfm(_) => {
            cli::cmd_train_bfm(&cfg)?;
            println!("wrote {}", cfg.bfm_checkpoint().display());
        }
        Command::Eval(_) => {
            let results = cli::cmd_eval(&cfg)?;
            for (label, report) in &results {
                println!(
                    "{label}: mean return {:.3}, success rate {:.2}",
                    report.mean_return, report.success_rate
                );
            }
            println!("wrote {}", cfg.paths.metrics.join("eval_summary.csv").display());
        }
        Command::Diag(_) => {
            let report = cli::cmd_diag(&cfg)?;
            println!(
                "bound report: lhs {:.6}, rhs {:.6} (L_d {:.6}, L_r {:.6})",
                report.lhs, report.rhs, report.loss_dynamics, report.loss_ortho
            );
            println!("wrote diagnostics under {}", cfg.paths.metrics.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match CliArgs::try_parse() {
        Ok(args) => args,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1); // usage errors exit 1
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
