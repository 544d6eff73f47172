use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use smt_core::pipeline::{self, ExperimentConfig, Stage, SynthLayout};
use smt_core::synth::{SynthSpec, WordOrder};

#[derive(Parser)]
#[command(name = "smt", version, about = "Phrase-based translation experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter the training corpus and write the flag report
    Clean(StageArgs),
    /// Suffix-split and inject lexicon resources
    Augment(StageArgs),
    /// Train Model 1 both ways and symmetrize
    Align(StageArgs),
    /// Extract and score the phrase table
    Phrases(StageArgs),
    /// Train the target language model
    Lm(StageArgs),
    /// Tune feature weights on the dev set
    Tune(StageArgs),
    /// Decode the test set with untuned and tuned weights
    Translate(StageArgs),
    /// Score translations against the test references
    Evaluate(StageArgs),
    /// Run every stage of one config
    Run(StageArgs),
    /// Run several configs end to end and print the comparison table
    Matrix(MatrixArgs),
    /// Write a synthetic experiment directory with data, resources and config
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set decoder.beam_size=50`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct MatrixArgs {
    /// One or more config files, run in the given order
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Expand each config into the six-system ladder
    #[arg(long)]
    ladder: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write the report as TSV
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Monotone,
    Reversed,
    SvoToSov,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write into
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, value_enum, default_value_t = Order::Monotone)]
    order: Order,
    #[arg(long, default_value_t = 0.0)]
    inflection_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    oov_holdout: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    dev: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn load(args: &StageArgs) -> Result<ExperimentConfig> {
    ExperimentConfig::load_with_overrides(&args.config, &args.overrides)
        .with_context(|| format!("loading {}", args.config.display()))
}

fn stage(stage: Stage, args: &StageArgs) -> Result<()> {
    let config = load(args)?;
    let written = pipeline::run_stage(stage, &config)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(args: &StageArgs) -> Result<()> {
    let config = load(args)?;
    let outcome = pipeline::run_config(&config)?;
    print!("{}", std::fs::read_to_string(config.stage_dir(Stage::Evaluate).join(pipeline::REPORT))?);
    log::info!("untuned BLEU {:.4}", outcome.untuned.bleu.score);
    Ok(())
}

fn matrix(args: &MatrixArgs) -> Result<bool> {
    let mut configs = Vec::new();
    for path in &args.config {
        let c = ExperimentConfig::load_with_overrides(path, &args.overrides)
            .with_context(|| format!("loading {}", path.display()))?;
        if args.ladder {
            configs.extend(pipeline::default_ladder(&c));
        } else {
            configs.push(c);
        }
    }
    let report = pipeline::run_matrix(&configs);
    print!("{}", report.to_table());
    if let Some(path) = &args.tsv {
        std::fs::write(path, report.to_tsv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let mut ok = true;
    for row in &report.rows {
        if let Err(e) = &row.scores {
            let tuning = if row.tuned { "tuned" } else { "untuned" };
            eprintln!("error: {} ({}): {}", row.system, tuning, e);
            ok = false;
        }
    }
    Ok(ok)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        vocab_size: args.vocab_size,
        word_order: match args.order {
            Order::Monotone => WordOrder::Monotone,
            Order::Reversed => WordOrder::Reversed,
            Order::SvoToSov => WordOrder::SvoToSov,
        },
        inflection_rate: args.inflection_rate,
        oov_holdout: args.oov_holdout,
        seed: args.seed,
        ..Default::default()
    };
    if !(0.0..=1.0).contains(&args.noise_rate) {
        bail!("noise rate must be in [0, 1]");
    }
    let layout = SynthLayout {
        train: args.train,
        dev: args.dev,
        test: args.test,
        noise_rate: args.noise_rate,
    };
    std::fs::create_dir_all(&args.dir).with_context(|| format!("creating {}", args.dir.display()))?;
    pipeline::write_synthetic_experiment(&args.dir, &args.name, &spec, &layout)?;
    println!("{}", args.dir.join("config.toml").display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Clean(a) => stage(Stage::Clean, a)?,
        Command::Augment(a) => stage(Stage::Augment, a)?,
        Command::Align(a) => stage(Stage::Align, a)?,
        Command::Phrases(a) => stage(Stage::Phrases, a)?,
        Command::Lm(a) => stage(Stage::Lm, a)?,
        Command::Tune(a) => stage(Stage::Tune, a)?,
        Command::Translate(a) => stage(Stage::Translate, a)?,
        Command::Evaluate(a) => stage(Stage::Evaluate, a)?,
        Command::Run(a) => run(a)?,
        Command::Matrix(a) => return matrix(a),
        Command::Synth(a) => synth(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
