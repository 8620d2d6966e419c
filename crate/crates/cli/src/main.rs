use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use muvfs_cli::commands;
use muvfs_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "muvfs",
    version,
    about = "Unsupervised few-shot video classification pipeline"
)]
struct Args {
    /// Flat `section.key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` setting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; its parent must exist.
    #[arg(long, global = true, default_value = "muvfs-out")]
    out: PathBuf,
    /// Extra `key=value` setting, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render the synthetic video dataset.
    Generate,
    /// Contrastively pretrain the two encoders.
    Pretrain,
    /// Meta-train the adaptation head on mined instance episodes.
    Metatrain,
    /// Few-shot evaluation on the novel classes.
    Evaluate,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
}

fn settings(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), CliError> {
    let cfg = settings(args)?;
    let out = &args.out;
    match args.command {
        Command::Generate => {
            let dir = commands::cmd_generate(&cfg, out)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Pretrain => {
            let dir = commands::cmd_pretrain(&cfg, out)?;
            println!("checkpoint and log written to {}", dir.display());
        }
        Command::Metatrain => {
            let dir = commands::cmd_metatrain(&cfg, out)?;
            println!("meta checkpoint and log written to {}", dir.display());
        }
        Command::Evaluate => {
            let threads = commands::threads_from_env()?;
            let eval = commands::cmd_evaluate(&cfg, out, threads)?;
            for w in &eval.warnings {
                eprintln!("warning: {w}");
            }
            for r in &eval.reports {
                println!(
                    "{}-way {}-shot {} {}: {}",
                    r.way,
                    r.shot,
                    r.learner,
                    r.head,
                    r.summary()
                );
            }
        }
        Command::Gradcheck => match commands::cmd_gradcheck(&cfg, out) {
            Ok(report) => print!("{}", report.to_text()),
            Err(e) => {
                let report_path = out.join("gradcheck").join("report.txt");
                if let Ok(text) = std::fs::read_to_string(report_path) {
                    print!("{text}");
                }
                return Err(e);
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
