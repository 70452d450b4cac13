use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use repaudit::config::AppConfig;
use repaudit::pipeline::{
    run_all, stage_associate, stage_generate, stage_marked_words, stage_report, stage_score,
    write_mock_embeddings, Artifacts, GenerateMode, GroupBy,
};

/// Audits demographic representation in LLM outputs: generates persona and
/// biography corpora, associates gender labels, extracts statistically
/// significant marked words, and scores cross-group representational bias.
#[derive(Parser)]
#[command(name = "repaudit", version, about)]
struct Cli {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for corpora and reports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Override the mock endpoint's seed (mock only).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Associated,
    Specified,
    Both,
}

#[derive(Args)]
struct GenerateArgs {
    /// Continue an interrupted campaign instead of refusing to append.
    #[arg(long)]
    resume: bool,

    /// Use the deterministic in-process endpoint regardless of the config.
    #[arg(long)]
    mock: bool,

    /// Which campaign(s) to run.
    #[arg(long, value_enum, default_value = "both")]
    mode: Mode,
}

#[derive(Subcommand)]
enum Command {
    /// Run the prompt campaign(s) and persist the corpora.
    Generate(GenerateArgs),

    /// Fill associated_gender in corpus files and print capture/validation
    /// summaries as CSV.
    Associate {
        /// Corpus files to label; defaults to the campaign corpora in the
        /// output directory.
        #[arg(long)]
        corpus: Vec<PathBuf>,
    },

    /// Extract statistically significant words per (model, occupation,
    /// gender) from the labeled corpora.
    Markedwords {
        /// Tune the prior-strength constants per comparison.
        #[arg(long)]
        autocalibrate: bool,

        /// Use the unmarked group's total in both odds denominators.
        #[arg(long)]
        literal_pseudocode: bool,
    },

    /// Compute subset-similarity bias scores and the per-model Welch test
    /// from the marked-word tables.
    Score {
        /// Keyed word-vector file; overrides the config.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },

    /// Emit representation, decile, non-binary, category, and
    /// percent-change reports plus the run manifest.
    Report,

    /// Run every stage in order: generate, associate, markedwords (both
    /// corpora), score, report.
    All(GenerateArgs),

    /// Write a synthetic embedding file covering the mock vocabulary.
    MockEmbeddings {
        /// Output path for the embedding file.
        #[arg(long, default_value = "mock_embeddings.txt")]
        path: PathBuf,

        /// Vector dimension.
        #[arg(long, default_value = "24")]
        dimension: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => {
            AppConfig::load(path).with_context(|| format!("loading config {}", path.display()))?
        }
        None => AppConfig::default(),
    };
    let artifacts = Artifacts::new(&cli.out_dir);

    match cli.command {
        Command::Generate(args) => {
            stage_generate(
                &config,
                &cli.out_dir,
                mode_of(args.mode),
                args.resume,
                args.mock,
                cli.seed,
            )?;
            eprintln!("corpora written under {}", cli.out_dir.display());
        }
        Command::Associate { corpus } => {
            let paths = if corpus.is_empty() {
                let defaults: Vec<PathBuf> =
                    [artifacts.corpus_associated(), artifacts.corpus_specified()]
                        .into_iter()
                        .filter(|p| p.exists())
                        .collect();
                if defaults.is_empty() {
                    bail!(
                        "no corpus files found under {}; pass --corpus",
                        cli.out_dir.display()
                    );
                }
                defaults
            } else {
                corpus
            };
            let summary = stage_associate(&paths, Some(&artifacts))?;
            print!("{}", summary.to_csv());
        }
        Command::Markedwords {
            autocalibrate,
            literal_pseudocode,
        } => {
            let mut config = config;
            if autocalibrate {
                config.analysis.autocalibrate = true;
            }
            if literal_pseudocode {
                config.analysis.literal_pseudocode = true;
            }
            for (path, group_by) in [
                (artifacts.corpus_associated(), GroupBy::Associated),
                (artifacts.corpus_specified(), GroupBy::Specified),
            ] {
                if !path.exists() {
                    continue;
                }
                let dir = artifacts.marked_dir(group_by.tag());
                let summary = stage_marked_words(&config, &path, group_by, &dir)?;
                eprintln!(
                    "{}: {} comparisons scored, {} skipped",
                    group_by.tag(),
                    summary.constants.len(),
                    summary.skipped.len()
                );
            }
        }
        Command::Score { embeddings } => {
            let mut config = config;
            if embeddings.is_some() {
                config.score.embeddings = embeddings;
            }
            let summary = stage_score(&config, &cli.out_dir)?;
            eprintln!(
                "{} cells scored, {} skipped",
                summary.scored_cells,
                summary.skipped.len()
            );
        }
        Command::Report => {
            stage_report(&config, &cli.out_dir)?;
            eprintln!("reports written under {}", cli.out_dir.display());
        }
        Command::All(args) => {
            let summary = run_all(&config, &cli.out_dir, args.resume, args.mock, cli.seed)?;
            print!("{}", summary.to_csv());
            eprintln!("pipeline complete; reports under {}", cli.out_dir.display());
        }
        Command::MockEmbeddings { path, dimension } => {
            write_mock_embeddings(&config, &path, dimension)?;
            eprintln!("mock embedding table written to {}", path.display());
        }
    }
    Ok(())
}

fn mode_of(mode: Mode) -> GenerateMode {
    match mode {
        Mode::Associated => GenerateMode::Associated,
        Mode::Specified => GenerateMode::Specified,
        Mode::Both => GenerateMode::Both,
    }
}
