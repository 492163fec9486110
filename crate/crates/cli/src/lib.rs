//! Pipeline stage drivers behind the `scenelearn` binary.
//!
//! Each function runs one stage end to end: it loads the stage's inputs from
//! disk, calls into the core library, writes the stage's outputs, and
//! returns a summary for the caller to print. Keeping the drivers in a
//! library makes the end-to-end tests fast (no subprocess per stage) while
//! the binary stays a thin argument parser.
//!
//! File conventions, relative to the corpus directory produced by
//! `gen-synthetic`:
//!
//! * `manifest.json` + `embeddings/*.m2se` — the corpus itself
//! * `truth.json` — generator ground truth (themes, signature spans)
//! * `scenes.jsonl` — labeled scene spans for the evaluations
//!
//! Movie pairs, mined scene pairs, checkpoints, and metric reports live
//! wherever `--out` points; training stages also write a `<out>.log.jsonl`
//! with one JSON object per epoch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use scenelearn::checkpoint::{write_checkpoint, TensorMap};
use scenelearn::config::PipelineConfig;
use scenelearn::corpus::{
    generate_synthetic_corpus, read_scenes_jsonl, write_corpus, write_scenes_jsonl, Corpus,
    LabeledScene, MovieId, SceneLabel, ShotEmbeddingMatrix, TASK_BOUNDARY,
};
use scenelearn::encoder::SceneEncoderParams;
use scenelearn::eval::metrics::knn_retrieve;
use scenelearn::eval::probe::{eval_probe, train_probe, ProbeLabels};
use scenelearn::eval::sbd::sbd_evaluate;
use scenelearn::eval::{
    bit_labels, class_labels, real_labels, scene_features, split_by_movie_parity,
    split_for_retrieval, take_rows, take_values, MetricKind, MetricReport, SceneFeaturizer,
};
use scenelearn::miner::{mine_corpus, read_scene_pairs_jsonl, write_scene_pairs_jsonl, MiningSkip};
use scenelearn::moco::train_contrastive;
use scenelearn::movie_sim::{train_movie_sim, MovieSimParams};
use scenelearn::similarity::{
    positive_pairs, read_pairs_jsonl, sample_negatives, write_pairs_jsonl, SimilaritySource,
};

/// Parses the CLI's similarity-source tokens.
pub fn parse_source(token: &str) -> Result<SimilaritySource> {
    match token {
        "mlt" => Ok(SimilaritySource::MoreLikeThis),
        "synopsis" => Ok(SimilaritySource::Synopsis),
        "genre" => Ok(SimilaritySource::Genre),
        other => bail!("unknown similarity source {other:?}; expected mlt, synopsis, or genre"),
    }
}

/// `<out>.log.jsonl`, next to a checkpoint.
pub fn log_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".log.jsonl");
    PathBuf::from(name)
}

fn require_file(path: &Path, what: &str, hint: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} not found; {hint}", path.display());
    }
    Ok(())
}

fn manifest_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.corpus_dir.join("manifest.json")
}

fn scenes_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.corpus_dir.join("scenes.jsonl")
}

fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    let path = manifest_path(cfg);
    require_file(&path, "corpus manifest", "run gen-synthetic first")?;
    Ok(Corpus::load(&path)?)
}

fn load_matrices(cfg: &PipelineConfig) -> Result<(Corpus, BTreeMap<MovieId, ShotEmbeddingMatrix>)> {
    let corpus = load_corpus(cfg)?;
    let matrices = corpus.load_all()?;
    Ok((corpus, matrices))
}

fn load_scenes(cfg: &PipelineConfig) -> Result<Vec<LabeledScene>> {
    let path = scenes_path(cfg);
    require_file(&path, "labeled scene file", "gen-synthetic writes it next to the manifest")?;
    Ok(read_scenes_jsonl(&path)?)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(reports)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Generates the synthetic corpus into `dir`; returns (movies, scenes).
pub fn gen_synthetic(cfg: &PipelineConfig, dir: &Path) -> Result<(usize, usize)> {
    let corpus = generate_synthetic_corpus(&cfg.synth)?;
    write_corpus(&corpus.manifest, &corpus.matrices, dir)?;
    corpus.truth.save(&dir.join("truth.json"))?;
    write_scenes_jsonl(&dir.join("scenes.jsonl"), &corpus.scenes)?;
    Ok((corpus.manifest.movies.len(), corpus.scenes.len()))
}

/// Derives movie pairs from the configured metadata source; returns
/// (positives, negatives).
pub fn make_pairs(cfg: &PipelineConfig, out: &Path) -> Result<(usize, usize)> {
    let corpus = load_corpus(cfg)?;
    let mut pairs = positive_pairs(&corpus.manifest, cfg.source, cfg.k_per_movie, cfg.seed)?;
    let negatives = sample_negatives(&corpus.manifest, &pairs, cfg.negative_ratio, cfg.seed)?;
    let n_pos = pairs.len();
    let n_neg = negatives.len();
    pairs.extend(negatives);
    write_pairs_jsonl(out, &pairs)?;
    Ok((n_pos, n_neg))
}

/// Trains the movie-similarity pair classifier; writes checkpoint + epoch
/// log; returns the per-epoch records.
pub fn train_movie_sim_stage(
    cfg: &PipelineConfig,
    pairs_path: &Path,
    out: &Path,
) -> Result<Vec<scenelearn::movie_sim::EpochLog>> {
    require_file(pairs_path, "movie-pair file", "run make-pairs first")?;
    let (_, matrices) = load_matrices(cfg)?;
    let pairs = read_pairs_jsonl(pairs_path)?;
    let (params, logs) = train_movie_sim(&matrices, &pairs, &cfg.movie_sim)?;
    write_checkpoint(out, &params.tensors())?;
    write_jsonl(&log_path(out), &logs)?;
    Ok(logs)
}

/// Mines positive scene pairs with a trained pair classifier; returns
/// (mined count, skips).
pub fn mine_scenes_stage(
    cfg: &PipelineConfig,
    pairs_path: &Path,
    checkpoint: &Path,
    out: &Path,
) -> Result<(usize, Vec<MiningSkip>)> {
    require_file(pairs_path, "movie-pair file", "run make-pairs first")?;
    require_file(checkpoint, "shot-encoder checkpoint", "run train-movie-sim first")?;
    let (corpus, matrices) = load_matrices(cfg)?;
    let pairs = read_pairs_jsonl(pairs_path)?;
    let map = TensorMap::load(checkpoint)?;
    let params = MovieSimParams::from_tensor_map(map, corpus.manifest.d_in, &cfg.movie_sim)?;
    let (mined, skips) = mine_corpus(&matrices, &params, &pairs, &cfg.mining)?;
    write_scene_pairs_jsonl(out, &mined)?;
    Ok((mined.len(), skips))
}

/// Contrastively trains the scene encoder on mined pairs; writes checkpoint
/// + epoch log; returns the per-epoch records.
pub fn train_contrastive_stage(
    cfg: &PipelineConfig,
    scenes_path: &Path,
    out: &Path,
) -> Result<Vec<scenelearn::moco::EpochLog>> {
    // "P_scene" names the mined positive scene-pair collection throughout
    // the artifact's file formats.
    require_file(scenes_path, "missing P_scene: mined scene-pair file", "run mine-scenes first")?;
    let (_, matrices) = load_matrices(cfg)?;
    let pairs = read_scene_pairs_jsonl(scenes_path)?;
    let (params, logs) = train_contrastive(&matrices, &pairs, &cfg.encoder, &cfg.moco)?;
    let tensors = params.tensors();
    let entries: Vec<(&str, &scenelearn::numerics::Mat)> =
        tensors.iter().map(|(name, mat)| (name.as_str(), *mat)).collect();
    write_checkpoint(out, &entries)?;
    write_jsonl(&log_path(out), &logs)?;
    Ok(logs)
}

fn load_encoder(cfg: &PipelineConfig, checkpoint: &Path, d_in: usize) -> Result<SceneEncoderParams> {
    require_file(checkpoint, "scene-encoder checkpoint", "run train-contrastive first")?;
    let map = TensorMap::load(checkpoint)?;
    Ok(SceneEncoderParams::from_tensor_map(map, d_in, &cfg.encoder)?)
}

/// The two arms every evaluation compares.
fn arms<'a>(params: &'a SceneEncoderParams, cfg: &'a PipelineConfig) -> [SceneFeaturizer<'a>; 2] {
    [SceneFeaturizer::Encoder { params, cfg: &cfg.encoder }, SceneFeaturizer::MeanPool]
}

fn scenes_by_task(scenes: Vec<LabeledScene>) -> BTreeMap<String, Vec<LabeledScene>> {
    let mut by_task: BTreeMap<String, Vec<LabeledScene>> = BTreeMap::new();
    for scene in scenes {
        by_task.entry(scene.task_id.clone()).or_default().push(scene);
    }
    by_task
}

/// Scene retrieval on every class-labeled task (the boundary task has its
/// own evaluation): gallery/query split, k nearest neighbors by L2,
/// precision@k overall and per class, for both arms.
pub fn eval_retrieval_stage(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    out: &Path,
) -> Result<Vec<MetricReport>> {
    let (corpus, matrices) = load_matrices(cfg)?;
    let encoder = load_encoder(cfg, checkpoint, corpus.manifest.d_in)?;
    let by_task = scenes_by_task(load_scenes(cfg)?);

    let mut reports = Vec::new();
    for (task, scenes) in &by_task {
        let class_task = task != TASK_BOUNDARY
            && scenes.iter().all(|s| matches!(s.label, SceneLabel::Class(_)));
        if !class_task {
            continue;
        }
        let labels = class_labels(scenes)?;
        let (gallery_idx, query_idx) = split_for_retrieval(scenes)?;
        for featurizer in arms(&encoder, cfg) {
            let features = scene_features(&matrices, scenes, &featurizer)?;
            let gallery = take_rows(&features, &gallery_idx);
            let gallery_labels = take_values(&labels, &gallery_idx);
            let queries = take_rows(&features, &query_idx);
            let query_labels = take_values(&labels, &query_idx);
            for &k in &cfg.retrieval_ks {
                let outcome = knn_retrieve(&queries, &query_labels, &gallery, &gallery_labels, k)?;
                let arm = featurizer.arm_name();
                reports.push(MetricReport::new(
                    format!("{task}/{arm}"),
                    MetricKind::PrecisionAtK(k),
                    outcome.overall,
                    query_labels.len(),
                )?);
                for (class, precision) in &outcome.per_class {
                    reports.push(MetricReport::new(
                        format!("{task}/{arm}/class/{class}"),
                        MetricKind::PrecisionAtK(k),
                        precision.value,
                        precision.support,
                    )?);
                }
            }
        }
    }
    if reports.is_empty() {
        bail!("no class-labeled scene task found in {}", scenes_path(cfg).display());
    }
    write_reports(out, &reports)?;
    Ok(reports)
}

fn probe_labels_for(task: &str, scenes: &[LabeledScene]) -> Result<ProbeLabels> {
    let labels = match &scenes[0].label {
        SceneLabel::Class(_) => class_labels(scenes).map(ProbeLabels::Classes),
        SceneLabel::Real(_) => real_labels(scenes).map(ProbeLabels::Reals),
        SceneLabel::Bits(_) => {
            let n_labels = scenes
                .iter()
                .filter_map(|s| match &s.label {
                    SceneLabel::Bits(bits) => bits.iter().max().copied(),
                    _ => None,
                })
                .max()
                .map_or(1, |top| top + 1);
            bit_labels(scenes, n_labels).map(ProbeLabels::Bits)
        }
    };
    labels.with_context(|| format!("collecting labels of task {task}"))
}

fn split_probe_labels(labels: &ProbeLabels, idx: &[usize]) -> ProbeLabels {
    match labels {
        ProbeLabels::Classes(v) => ProbeLabels::Classes(take_values(v, idx)),
        ProbeLabels::Reals(v) => ProbeLabels::Reals(take_values(v, idx)),
        ProbeLabels::Bits(m) => ProbeLabels::Bits(take_rows(m, idx)),
    }
}

/// Trains and scores an MLP probe per configured task (except the boundary
/// task) on frozen features of both arms, splitting train/test by movie.
pub fn eval_probe_stage(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    out: &Path,
) -> Result<Vec<MetricReport>> {
    let (corpus, matrices) = load_matrices(cfg)?;
    let encoder = load_encoder(cfg, checkpoint, corpus.manifest.d_in)?;
    let by_task = scenes_by_task(load_scenes(cfg)?);

    let mut reports = Vec::new();
    for (task, probe_cfg) in &cfg.probes {
        if task == TASK_BOUNDARY {
            continue; // eval-sbd owns the boundary task
        }
        let scenes = by_task
            .get(task)
            .with_context(|| format!("probe task {task} has no labeled scenes in {}", scenes_path(cfg).display()))?;
        let labels = probe_labels_for(task, scenes)?;
        let (train_idx, test_idx) = split_by_movie_parity(scenes, &matrices)?;
        for featurizer in arms(&encoder, cfg) {
            let features = scene_features(&matrices, scenes, &featurizer)?;
            let train_features = take_rows(&features, &train_idx);
            let train_labels = split_probe_labels(&labels, &train_idx);
            let (params, _) = train_probe(&train_features, &train_labels, probe_cfg, cfg.seed)?;
            let test_features = take_rows(&features, &test_idx);
            let test_labels = split_probe_labels(&labels, &test_idx);
            let scored = eval_probe(&params, &test_features, &test_labels, task)?;
            let arm = featurizer.arm_name();
            reports.push(MetricReport::new(
                format!("{task}/{arm}"),
                scored.metric,
                scored.value,
                scored.support,
            )?);
        }
    }
    if reports.is_empty() {
        bail!("no probe task configured outside the boundary task");
    }
    write_reports(out, &reports)?;
    Ok(reports)
}

/// Boundary detection: binary probe on concatenated per-shot features,
/// average precision on held-out movies, both arms.
pub fn eval_sbd_stage(cfg: &PipelineConfig, checkpoint: &Path, out: &Path) -> Result<Vec<MetricReport>> {
    let (corpus, matrices) = load_matrices(cfg)?;
    let encoder = load_encoder(cfg, checkpoint, corpus.manifest.d_in)?;
    let by_task = scenes_by_task(load_scenes(cfg)?);
    let samples = by_task
        .get(TASK_BOUNDARY)
        .with_context(|| format!("no {TASK_BOUNDARY} samples in {}", scenes_path(cfg).display()))?;
    let probe_cfg = cfg
        .probes
        .get(TASK_BOUNDARY)
        .with_context(|| format!("no probe configured for task {TASK_BOUNDARY}"))?;

    let mut reports = Vec::new();
    for featurizer in arms(&encoder, cfg) {
        let scored = sbd_evaluate(&matrices, samples, &featurizer, probe_cfg, cfg.seed)?;
        let arm = featurizer.arm_name();
        reports.push(MetricReport::new(
            format!("{TASK_BOUNDARY}/{arm}"),
            scored.metric,
            scored.value,
            scored.support,
        )?);
    }
    write_reports(out, &reports)?;
    Ok(reports)
}

/// The aggregated output of `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// Number of aggregated metrics.
    pub n_metrics: usize,
    /// All metrics, sorted by task id then metric name.
    pub metrics: Vec<MetricReport>,
}

/// Merges metric files produced by the eval stages into one summary.
pub fn report_stage(inputs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    if inputs.is_empty() {
        bail!("report needs at least one metric file produced by an eval stage");
    }
    let mut metrics = Vec::new();
    for path in inputs {
        require_file(path, "metric file", "eval stages write these")?;
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let reports: Vec<MetricReport> = serde_json::from_str(&text)
            .with_context(|| format!("parsing metric file {}", path.display()))?;
        metrics.extend(reports);
    }
    metrics.sort_by(|a, b| {
        (&a.task_id, a.metric.to_string()).cmp(&(&b.task_id, b.metric.to_string()))
    });
    let summary = ReportSummary { n_metrics: metrics.len(), metrics };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(summary)
}

/// Writes `lines` to stdout-style sinks used by the binary; kept here so the
/// binary and tests format epochs identically.
pub fn format_epoch_line(prefix: &str, fields: &[(&str, f64)]) -> String {
    let mut line = String::from(prefix);
    for (name, value) in fields {
        line.push_str(&format!(" {name} {value:.4}"));
    }
    line
}
