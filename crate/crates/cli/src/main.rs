//! `scenelearn` — drive the scene-representation pipeline stage by stage.
//!
//! Every stage is a pure function of (inputs, config, seed): identical
//! invocations produce byte-identical outputs, checkpoints included. Run
//! `scenelearn <stage> --help` for the stage's flags.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use scenelearn::config::{PipelineConfig, Preset};
use scenelearn_cli::{
    eval_probe_stage, eval_retrieval_stage, eval_sbd_stage, format_epoch_line, gen_synthetic,
    log_path, make_pairs, mine_scenes_stage, parse_source, report_stage, train_contrastive_stage,
    train_movie_sim_stage,
};

#[derive(Parser)]
#[command(
    name = "scenelearn",
    version,
    about = "Scene-representation pipeline: synthetic corpus, movie pairs, similarity training, scene mining, contrastive training, and evaluations"
)]
struct Cli {
    /// JSON config file (the full schema); mutually exclusive with --preset.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Named defaults when no config file is given: paper | desk.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Master seed; overrides the config file's seed everywhere.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Corpus directory; overrides the config file's corpus_dir.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shot-embedding corpus with ground truth.
    GenSynthetic {
        /// Output directory; defaults to the configured corpus directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive positive/negative movie pairs from metadata.
    MakePairs {
        /// Pair file to write (JSON lines).
        #[arg(long)]
        out: PathBuf,
        /// Similarity source: mlt | synopsis | genre.
        #[arg(long)]
        source: Option<String>,
    },
    /// Train the movie-similarity pair classifier.
    TrainMovieSim {
        /// Movie-pair file from make-pairs.
        #[arg(long)]
        pairs: PathBuf,
        /// Checkpoint to write; the epoch log goes to <out>.log.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine positive scene pairs with a trained pair classifier.
    MineScenes {
        /// Movie-pair file from make-pairs.
        #[arg(long)]
        pairs: PathBuf,
        /// Pair-classifier checkpoint from train-movie-sim.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene-pair file to write (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastively train the scene encoder on mined pairs.
    TrainContrastive {
        /// Mined scene-pair file from mine-scenes.
        #[arg(long)]
        pairs: PathBuf,
        /// Checkpoint to write; the epoch log goes to <out>.log.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Scene retrieval: precision@k per task, encoder vs mean-pool arms.
    EvalRetrieval {
        /// Scene-encoder checkpoint from train-contrastive.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metric file to write (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// MLP probes on frozen scene features, one per configured task.
    EvalProbe {
        /// Scene-encoder checkpoint from train-contrastive.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metric file to write (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Shot-boundary detection probe on 4-shot windows.
    EvalSbd {
        /// Scene-encoder checkpoint from train-contrastive.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metric file to write (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate metric files from the eval stages into one summary.
    Report {
        /// Summary file to write (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Metric files produced by eval-retrieval / eval-probe / eval-sbd.
        inputs: Vec<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(name)) => PipelineConfig::preset(name.parse::<Preset>()?),
        (None, None) => PipelineConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_master_seed(seed);
    }
    if let Some(corpus) = &cli.corpus {
        cfg.corpus_dir = corpus.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::GenSynthetic { out } => {
            let dir = out.clone().unwrap_or_else(|| cfg.corpus_dir.clone());
            let (movies, scenes) = gen_synthetic(&cfg, &dir)?;
            println!("wrote corpus: {movies} movies, {scenes} labeled scenes -> {}", dir.display());
        }
        Command::MakePairs { out, source } => {
            if let Some(token) = source {
                cfg.source = parse_source(token)?;
            }
            let (positives, negatives) = make_pairs(&cfg, out)?;
            println!(
                "wrote {positives} positive and {negatives} negative movie pairs ({}) -> {}",
                serde_json::to_string(&cfg.source).context("serializing source")?.trim_matches('"'),
                out.display()
            );
        }
        Command::TrainMovieSim { pairs, out } => {
            let logs = train_movie_sim_stage(&cfg, pairs, out)?;
            for log in &logs {
                println!(
                    "{}",
                    format_epoch_line(&format!("epoch {}:", log.epoch), &[("loss", log.loss), ("acc", log.acc)])
                );
            }
            println!("wrote checkpoint -> {} (log: {})", out.display(), log_path(out).display());
        }
        Command::MineScenes { pairs, checkpoint, out } => {
            let (mined, skips) = mine_scenes_stage(&cfg, pairs, checkpoint, out)?;
            for skip in &skips {
                eprintln!("skipped pair ({}, {}): {}", skip.movie_a, skip.movie_b, skip.reason);
            }
            println!("mined {mined} scene pairs ({} movie pairs skipped) -> {}", skips.len(), out.display());
        }
        Command::TrainContrastive { pairs, out } => {
            let logs = train_contrastive_stage(&cfg, pairs, out)?;
            for log in &logs {
                println!(
                    "{}",
                    format_epoch_line(
                        &format!("epoch {}:", log.epoch),
                        &[("loss", log.loss), ("top1", log.top1), ("top5", log.top5)]
                    )
                );
            }
            println!("wrote checkpoint -> {} (log: {})", out.display(), log_path(out).display());
        }
        Command::EvalRetrieval { checkpoint, out } => {
            print_reports(&eval_retrieval_stage(&cfg, checkpoint, out)?, out);
        }
        Command::EvalProbe { checkpoint, out } => {
            print_reports(&eval_probe_stage(&cfg, checkpoint, out)?, out);
        }
        Command::EvalSbd { checkpoint, out } => {
            print_reports(&eval_sbd_stage(&cfg, checkpoint, out)?, out);
        }
        Command::Report { out, inputs } => {
            let summary = report_stage(inputs, out)?;
            println!("aggregated {} metrics from {} files -> {}", summary.n_metrics, inputs.len(), out.display());
        }
    }
    Ok(())
}

fn print_reports(reports: &[scenelearn::eval::MetricReport], out: &std::path::Path) {
    for report in reports {
        println!(
            "{} {} = {:.4} (n={})",
            report.task_id, report.metric, report.value, report.support
        );
    }
    println!("wrote {} metrics -> {}", reports.len(), out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
