use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itct::metrics::{render, render_comparison};
use itct::pipeline::{self, PipelineConfig};
use itct::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "itct", version, about = "Transformer-based IoT traffic classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Share of every cached split to use, sampled per class.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::from_file(&self.config)?;
        if let Some(f) = self.fraction {
            cfg.fraction = f;
        }
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, impute, balance, split, encode and cache the five capture files.
    Preprocess(RunArgs),
    /// Rank features with a random forest and write the importance report.
    SelectFeatures(RunArgs),
    /// Train a model on the cached train split.
    Train(RunArgs),
    /// Evaluate a saved model on the cached test split.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the model in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the three experiment configurations and compare them.
    ExperimentMatrix(RunArgs),
    /// Score the rows of a CSV file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Continue training a saved model on a labelled CSV file.
    FineTune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write synthetic capture files in the default schema.
    GenerateSurrogate {
        #[arg(long)]
        output: PathBuf,
        /// Share of the original capture sizes to generate.
        #[arg(long, default_value_t = 0.02)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::json("command output", e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(args) => {
            let summary = pipeline::cmd_preprocess(&args.load()?)?;
            println!("{}", json(&summary)?);
        }
        Command::SelectFeatures(args) => {
            let report = pipeline::cmd_select_features(&args.load()?)?;
            println!("{}", json(&report)?);
        }
        Command::Train(args) => {
            let outcome = pipeline::cmd_train(&args.load()?)?;
            print!("{}", outcome.history.to_csv());
            println!("model written to {}", outcome.model_path.display());
        }
        Command::Evaluate { run, model } => {
            let cfg = run.load()?;
            let model = model.unwrap_or_else(|| cfg.output_dir.join(pipeline::MODEL_FILE));
            let report = pipeline::cmd_evaluate(&cfg, &model)?;
            print!("{}", render(&report, "markdown")?);
        }
        Command::ExperimentMatrix(args) => {
            let reports = pipeline::cmd_experiment_matrix(&args.load()?)?;
            print!("{}", render_comparison(&reports, "markdown")?);
        }
        Command::Predict { model, input, output } => {
            let text = pipeline::cmd_predict(&model, &input)?;
            write_output(output.as_deref(), &text)?;
        }
        Command::FineTune {
            run,
            model,
            input,
            output,
        } => {
            let (_, history) = pipeline::cmd_fine_tune(&run.load()?, &model, &input, &output)?;
            print!("{}", history.to_csv());
            println!("model written to {}", output.display());
        }
        Command::GenerateSurrogate { output, scale, seed } => {
            for path in itct::synth::generate_surrogate(&output, scale, seed)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
