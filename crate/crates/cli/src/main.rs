use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use htr_adapt::eval::{render_paired, render_report};
use htr_cli::run::render_combined;
use htr_cli::{adapt_writer, eval_run, gen_data, load_dataset, report, run_dir, train_seed, CliError, EvalMode, ExperimentConfig};

/// Writer-adaptive handwriting recognition experiments.
#[derive(Parser)]
#[command(name = "htr-adapt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set method=maml`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed; one run directory per seed.
    Train(ConfigArgs),
    /// Evaluate trained runs on the test writers.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directories to evaluate instead of those named by the config.
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        #[arg(long, group = "mode")]
        with_adaptation: bool,
        #[arg(long, group = "mode")]
        without_adaptation: bool,
        /// Both conditions on identical episodes plus a Welch t-test.
        #[arg(long, group = "mode")]
        both: bool,
    },
    /// Adapt a trained run to one test writer and decode their remaining samples.
    Adapt {
        #[arg(long = "run")]
        run: PathBuf,
        #[arg(long)]
        writer: String,
        /// Which of the protocol's support draws to use.
        #[arg(long, default_value_t = 0)]
        run_index: usize,
    },
    /// Render the configured synthetic corpus as PNGs plus a manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine evaluated runs into summary tables.
    Report {
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let ds = load_dataset(&cfg)?;
            for &seed in &cfg.seeds {
                let out = train_seed(&cfg, seed, &ds)?;
                let last = out.log.last().map(|(s, i, l)| format!(", last {s} step {i} loss {l:.4}")).unwrap_or_default();
                println!("{}: checksum {:016x}{last}", out.dir.display(), out.checksum);
            }
        }
        Command::Eval { config, runs, with_adaptation, without_adaptation, both } => {
            let mode = match (with_adaptation, without_adaptation, both) {
                (_, true, _) => EvalMode::Without,
                (_, _, true) => EvalMode::Both,
                _ => EvalMode::With,
            };
            let dirs = if runs.is_empty() {
                let cfg = config.resolve()?;
                cfg.seeds.iter().map(|&s| run_dir(&cfg, s)).collect()
            } else {
                runs
            };
            for dir in dirs {
                let out = eval_run(&dir, mode)?;
                println!("== {}", dir.display());
                match &out.paired {
                    Some(p) => print!("{}", render_paired(p)),
                    None => {
                        for r in out.with.iter().chain(&out.without) {
                            print!("{}", render_report(r));
                        }
                    }
                }
            }
        }
        Command::Adapt { run, writer, run_index } => {
            let out = adapt_writer(&run, &writer, run_index)?;
            for (reference, pred) in &out.query {
                println!("{reference}\t{pred}");
            }
            println!("CER {:.2}%  WER {:.2}%", 100.0 * out.cer, 100.0 * out.wer);
        }
        Command::GenData { config, out } => {
            let cfg = config.resolve()?;
            println!("{}", gen_data(&cfg, &out)?.display());
        }
        Command::Report { runs, out } => {
            let combined = report(&runs, &out)?;
            print!("{}", render_combined(&combined));
        }
    }
    Ok(())
}
