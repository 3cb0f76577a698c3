mod commands;
mod config;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::settings::*;

const OVERRIDE_HELP: &str = "Config values can be overridden with --key=value (dotted paths such as \
--training.epochs=5) or --set key=value. Values are parsed as JSON when possible, else taken as strings.\n\
Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical failure.\n\
IFNET_DETERMINISTIC=1 is recorded in the effective config; reductions are always fixed-order.";

#[derive(Parser)]
#[command(name = "handsar", version, about = "Near-field mmWave SAR imaging, motion-error simulation and autofocus")]
#[command(after_help = OVERRIDE_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file layered over the defaults.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
    /// Cap the worker thread count.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Scene and geometry to clean signal and image files.
    Simulate(Common),
    /// Apply a random trajectory error to a clean signal.
    Corrupt(Common),
    /// Reconstruct an image from a signal (RMA or BPA).
    Image(Common),
    /// Classical sparse autofocus of a distorted signal.
    Autofocus(Common),
    /// Synthesize a paired distorted/clean corpus.
    Dataset(Common),
    /// Train the unfolded network on a corpus.
    Train(Common),
    /// Focus distorted images with a trained checkpoint.
    Infer(Common),
    /// PSNR/SSIM/entropy of output images against references.
    Eval(Common),
    /// Retrain over stage and ResBlock counts and tabulate metrics.
    Ablate(Common),
}

fn run_with<T, F>(name: &str, common: &Common, dotted: &[String], output_dir: fn(&T) -> &PathBuf, f: F) -> CliResult<()>
where
    T: Serialize + DeserializeOwned + Default,
    F: FnOnce(&T) -> CliResult<()>,
{
    let mut overrides = dotted.to_vec();
    overrides.extend(common.set.iter().cloned());
    let cfg: T = config::resolve(common.config.as_deref(), &overrides)?;
    if common.print_config {
        println!("{}", config::to_pretty(&cfg));
        return Ok(());
    }
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let dir = output_dir(&cfg);
    commands::ensure_dir(dir)?;
    config::dump_effective(dir, name, &cfg, rayon::current_num_threads())?;
    f(&cfg)
}

fn dispatch(cli: Cli, dotted: &[String]) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(c) => run_with("simulate", c, dotted, |s: &SimulateSettings| &s.output_dir, commands::simulate),
        Command::Corrupt(c) => run_with("corrupt", c, dotted, |s: &CorruptSettings| &s.output_dir, commands::corrupt),
        Command::Image(c) => run_with("image", c, dotted, |s: &ImageSettings| &s.output_dir, commands::image),
        Command::Autofocus(c) => {
            run_with("autofocus", c, dotted, |s: &AutofocusSettings| &s.output_dir, commands::autofocus)
        }
        Command::Dataset(c) => run_with("dataset", c, dotted, |s: &DatasetSettings| &s.output_dir, commands::dataset),
        Command::Train(c) => run_with("train", c, dotted, |s: &TrainSettings| &s.output_dir, commands::train_cmd),
        Command::Infer(c) => run_with("infer", c, dotted, |s: &InferSettings| &s.output_dir, commands::infer_cmd),
        Command::Eval(c) => run_with("eval", c, dotted, |s: &EvalSettings| &s.output_dir, commands::eval_cmd),
        Command::Ablate(c) => run_with("ablate", c, dotted, |s: &AblateSettings| &s.output_dir, commands::ablate),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let (args, dotted) = config::extract_overrides(std::env::args_os().collect());
    let cli = Cli::parse_from(args);
    match dispatch(cli, &dotted) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("handsar: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
