use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod failure;

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "affectva", version, about = "Valence and arousal regression from multilingual text")]
struct Cli {
    /// Repeat for more log output
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Merge the datasets of a manifest into one normalized corpus file
    BuildCorpus {
        #[arg(long)]
        manifest: PathBuf,
        /// Corpus output (JSON lines)
        #[arg(long, short)]
        output: PathBuf,
        /// Stats report; defaults to `<output>.stats.json`
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Root that relative `source_uri`s resolve against; defaults to the manifest's directory
        #[arg(long, env = "AFFECTVA_DATA_ROOT")]
        data_root: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fine-tune a model on one or both folds of a corpus
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        #[arg(long)]
        runs_root: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        /// Overwrite an existing run directory
        #[arg(long)]
        force: bool,
    },
    /// Score text lines with a saved predictor
    Predict {
        /// Predictor directory (a `fold_A` / `fold_B` run directory)
        #[arg(long)]
        model: PathBuf,
        /// One text per line; stdin when omitted
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run an experiment plan: model × loss grid, zero-shot, ablation
    Experiment {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        /// Results root; the plan writes into `<output>/<plan name>/`
        #[arg(long, short, default_value = "results")]
        output: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Render the tables of a finished experiment
    Report {
        /// Directory holding `results.json`
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum)]
        group_by: Option<GroupByArg>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Write the bundled synthetic corpus files and their manifest
    MakeFixture {
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = affectva::fixture::DEFAULT_FIXTURE_SEED)]
        seed: u64,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ScaleArg {
    Desk,
    Full,
}

impl From<ScaleArg> for affectva::experiments::Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Self::Desk,
            ScaleArg::Full => Self::Full,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GroupByArg {
    Dataset,
    Language,
    Granularity,
    Global,
}

impl From<GroupByArg> for affectva::metrics::GroupBy {
    fn from(g: GroupByArg) -> Self {
        match g {
            GroupByArg::Dataset => Self::Dataset,
            GroupByArg::Language => Self::Language,
            GroupByArg::Granularity => Self::Granularity,
            GroupByArg::Global => Self::Global,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Text,
    Csv,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BuildCorpus { manifest, output, stats, data_root, seed } => {
            let data_root = data_root.unwrap_or_else(|| parent_dir(&manifest));
            let stats = stats.unwrap_or_else(|| sibling(&output, "stats.json"));
            commands::build_corpus(&manifest, &output, &stats, &data_root, seed)
        }
        Command::Train { config, corpus, seed, scale, runs_root, run_id, force } => commands::train(commands::TrainArgs {
            config,
            corpus,
            seed,
            desk: scale == Some(ScaleArg::Desk),
            runs_root,
            run_id,
            force,
        }),
        Command::Predict { model, input, output } => commands::predict(&model, input.as_deref(), output.as_deref()),
        Command::Experiment { plan, corpus, seed, scale, output, force } => {
            commands::experiment(&plan, corpus, seed, scale.map(Into::into), &output, force)
        }
        Command::Report { results, group_by, format } => {
            commands::report(&results, group_by.map(Into::into), format == Format::Csv)
        }
        Command::MakeFixture { output, seed } => commands::make_fixture(&output, seed),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into());
    parent_dir(path).join(format!("{name}.{suffix}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
