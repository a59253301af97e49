use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod data;
mod error;
mod manifest;
mod report;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pacl", version, about = "Multi-intent detection and slot filling with prediction-aware contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Block,
    Jsonl,
}

/// Flags that switch off parts of the method.
#[derive(Debug, Clone, Copy, Default, Args)]
pub struct Ablation {
    /// Skip word-level pre-training.
    #[arg(long)]
    pub no_pt: bool,
    /// Use fixed label-equality roles.
    #[arg(long)]
    pub no_rs: bool,
    /// Use unweighted pairs.
    #[arg(long)]
    pub no_pa: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multi-intent corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        validation: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Validate a corpus, optionally subsample it, and write it as JSONL.
    Prepare {
        /// Directory holding train, validation (or dev) and test files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: InputFormat,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subsample: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the word-level pre-training dataset.
    BuildWordlevel {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "NN,NNS,JJ")]
        pos_keep: Vec<String>,
        /// `word<TAB>TAG` lexicon; defaults to `lexicon.tsv` in the corpus directory when present.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word-level pre-training.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Prepared corpus directory.
        #[arg(long)]
        data: PathBuf,
        /// Word-level JSONL; defaults to `wordlevel.jsonl` in the data directory.
        #[arg(long)]
        wordlevel: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Contrastive fine-tuning. Pre-trains first when enabled and no `--init` is given.
    Finetune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Start from this checkpoint instead of pre-training.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        wordlevel: Option<PathBuf>,
        #[command(flatten)]
        ablation: Ablation,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learning curves and a 2-D projection of fused representations as SVG.
    Report {
        /// One or two run directories; with two, the first is drawn as the baseline.
        #[arg(long = "run-dir", required = true, num_args = 1..)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baseline versus full method over seeds and data fractions, optionally over the ablation grid.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        fractions: Vec<f64>,
        /// Run all eight pre-training/role/weighting combinations.
        #[arg(long)]
        grid: bool,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Re-run the command recorded in a manifest and compare output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn dispatch(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Synth {
            out,
            seed,
            train,
            validation,
            test,
        } => commands::synth(argv, &out, seed, train, validation, test),
        Command::Prepare {
            input,
            format,
            out,
            subsample,
            seed,
        } => commands::prepare(argv, &input, format, &out, subsample, seed),
        Command::BuildWordlevel {
            corpus,
            pos_keep,
            lexicon,
            seed,
            out,
        } => commands::build_wordlevel(argv, &corpus, &pos_keep, lexicon.as_deref(), seed, &out),
        Command::Pretrain {
            config,
            data,
            wordlevel,
            out_dir,
        } => commands::pretrain(argv, config.as_deref(), &data, wordlevel.as_deref(), &out_dir),
        Command::Finetune {
            config,
            data,
            out_dir,
            init,
            wordlevel,
            ablation,
        } => commands::finetune(
            argv,
            config.as_deref(),
            &data,
            &out_dir,
            init.as_deref(),
            wordlevel.as_deref(),
            ablation,
        ),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
        } => commands::evaluate(argv, &checkpoint, &data, &split, out.as_deref()),
        Command::Report { run_dirs, out } => commands::report(argv, &run_dirs, &out),
        Command::Experiment {
            config,
            data,
            out_dir,
            seeds,
            fractions,
            grid,
            lexicon,
        } => commands::experiment(
            argv,
            config.as_deref(),
            &data,
            &out_dir,
            &seeds,
            &fractions,
            grid,
            lexicon.as_deref(),
        ),
        Command::Replay { manifest } => replay(&manifest),
    }
}

/// Runs the recorded command again from its recorded working directory and
/// checks every recorded output digest.
fn replay(path: &std::path::Path) -> Result<(), CliError> {
    let recorded = manifest::load(path)?;
    if recorded.args.first().map(String::as_str) == Some("replay") {
        return Err(CliError::Input("cannot replay a replay".into()));
    }
    std::env::set_current_dir(&recorded.cwd).map_err(|e| CliError::input(std::path::Path::new(&recorded.cwd), e))?;
    let argv: Vec<String> = std::iter::once("pacl".to_owned()).chain(recorded.args.iter().cloned()).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::Input(e.to_string()))?;
    dispatch(cli.command, &recorded.args)?;
    let mut mismatched = Vec::new();
    for (file, digest) in &recorded.outputs {
        let now = std::fs::read(file).map(|b| manifest::sha256_hex(&b)).unwrap_or_default();
        if &now != digest {
            mismatched.push(file.clone());
        }
    }
    if mismatched.is_empty() {
        println!("replay reproduced {} outputs", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Runtime(format!("outputs differ after replay: {}", mismatched.join(", "))))
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
