//! `rarex`: corpus checks, pair mining, head training, retrieval, prompt
//! rendering and LLM evaluation behind one config file.
//!
//! Exit codes: 0 success, 1 invalid usage, config or inputs, 2 runtime
//! failure.

mod commands;
mod config;
mod failure;
mod load;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rarex_core::corpus::Split;
use rarex_core::prompt::CoTStyle;
use rarex_core::retrieval::Strategy;
use rarex_eval::DEFAULT_SHOTS;

use commands::{Ctx, ExperimentOverrides, Format};
use failure::CmdResult;

#[derive(Parser)]
#[command(name = "rarex", version, about = "Relation-aware demonstration retrieval and clinical RE evaluation")]
struct Cli {
    /// Config file; relative paths inside it resolve against its directory.
    #[arg(long, global = true, default_value = "rarex.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Load and check everything, print the plan, write nothing and send
    /// no requests.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus checks and sampling.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Embedding file import.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Contrastive pair mining.
    #[command(subcommand)]
    Pairs(PairsCmd),
    /// Projection head training and application.
    #[command(subcommand)]
    Head(HeadCmd),
    /// Writes the top-k demonstrations for every test query.
    Retrieve {
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Prompt inspection.
    #[command(subcommand)]
    Prompt(PromptCmd),
    /// Demonstration reasoning generation.
    #[command(subcommand)]
    Cot(CotCmd),
    /// Experiment runs.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Summarizes stored reports after re-checking their aggregates.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        /// Writes one confusion matrix CSV per report here.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parses the configured corpora (or `--input`) and prints label counts.
    Validate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Writes a label-stratified sample.
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EmbedCmd {
    /// Checks an exported embedding file against the corpora and stores it
    /// as `paths.embeddings`.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PairsCmd {
    Mine,
}

#[derive(Subcommand)]
enum HeadCmd {
    Train,
    /// Adds ft_sentence, ft_e1 and ft_e2 to a copy of the embeddings.
    Apply,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    style: Option<CoTStyle>,
    #[arg(long)]
    endpoint: Option<String>,
}

impl ExperimentArgs {
    fn overrides(self, shots: Option<usize>) -> ExperimentOverrides {
        ExperimentOverrides {
            name: self.name,
            strategy: self.strategy,
            style: self.style,
            shots,
            endpoint: self.endpoint,
        }
    }
}

#[derive(Subcommand)]
enum PromptCmd {
    /// Prints the prompt a test instance would receive.
    Render {
        #[arg(long)]
        id: String,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        shots: Option<usize>,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
}

#[derive(Subcommand)]
enum CotCmd {
    /// Fills the reasoning cache for the demonstrations a run will show.
    Generate {
        /// Every train instance instead of only the retrieved ones.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        shots: Option<usize>,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Evaluates the test corpus; resumes an interrupted report.
    Run {
        #[arg(long)]
        shots: Option<usize>,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
    /// Reruns the experiment for each shot count.
    Ablate {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SHOTS)]
        shots: Vec<usize>,
        #[command(flatten)]
        experiment: ExperimentArgs,
    },
}

fn dispatch(cli: Cli) -> CmdResult {
    let ctx = Ctx { config_path: cli.config, seed: cli.seed, dry_run: cli.dry_run };
    match cli.command {
        Command::Corpus(CorpusCmd::Validate { input, split }) => commands::corpus_validate(&ctx, input, split),
        Command::Corpus(CorpusCmd::Sample { n, split, output }) => commands::corpus_sample(&ctx, n, split, output),
        Command::Embed(EmbedCmd::Import { input, output }) => commands::embed_import(&ctx, &input, output),
        Command::Pairs(PairsCmd::Mine) => commands::pairs_mine(&ctx),
        Command::Head(HeadCmd::Train) => commands::head_train(&ctx),
        Command::Head(HeadCmd::Apply) => commands::head_apply(&ctx),
        Command::Retrieve { strategy, k, output } => commands::retrieve(&ctx, strategy, k, output),
        Command::Prompt(PromptCmd::Render { id, output, shots, experiment }) => {
            commands::prompt_render(&ctx, &id, &experiment.overrides(shots), output)
        }
        Command::Cot(CotCmd::Generate { all, shots, experiment }) => {
            commands::cot_generate(&ctx, &experiment.overrides(shots), all)
        }
        Command::Eval(EvalCmd::Run { shots, experiment }) => commands::eval_run(&ctx, &experiment.overrides(shots)),
        Command::Eval(EvalCmd::Ablate { shots, experiment }) => {
            commands::eval_ablate(&ctx, &shots, &experiment.overrides(None))
        }
        Command::Report { files, format, confusion } => commands::report(&ctx, &files, format, confusion),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
