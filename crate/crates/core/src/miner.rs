//! Scene-pair mining from cross-movie shot correlations.
//!
//! Given two related movies encoded by the trained shot encoder, the inner
//! products between their shots form a correlation grid. Averaging that grid
//! over aligned fixed-length windows scores every (scene in A, scene in B)
//! candidate; the best-scoring aligned windows are the pseudo-positive scene
//! pairs the contrastive stage trains on.
//!
//! Selection is deterministic: candidates are ranked by score descending with
//! ties broken by ascending grid position, only the top `keep_fraction` share
//! is examined, and a greedy sweep accepts a candidate exactly when its span
//! in movie A overlaps no accepted A-span and its span in movie B overlaps no
//! accepted B-span. Adjacent spans (touching endpoints) do not overlap.
//! Movies too short for the window are skipped with a recorded reason rather
//! than aborting the run.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{MovieId, SceneSpan, ShotEmbeddingMatrix};
use crate::movie_sim::{embed_shots_eval, MovieSimParams};
use crate::numerics::{avg_pool, Mat, NumericsError};
use crate::similarity::SimilarityPair;

/// Geometry and budget of the mining sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    /// Scene length in shots; also the side of the averaging window.
    pub window: usize,
    /// Step between candidate scene starts.
    pub stride: usize,
    /// Share of ranked candidates examined, `(0, 1]`.
    pub keep_fraction: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { window: 9, stride: 1, keep_fraction: 0.5 }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MinerError> {
        if self.window == 0 {
            return Err(MinerError::BadConfig { field: "window", reason: "must be at least 1".into() });
        }
        if self.stride == 0 {
            return Err(MinerError::BadConfig { field: "stride", reason: "must be at least 1".into() });
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(MinerError::BadConfig {
                field: "keep_fraction",
                reason: format!("{} is outside (0, 1]", self.keep_fraction),
            });
        }
        Ok(())
    }
}

/// Failure in the mining stage.
#[derive(Debug, thiserror::Error)]
pub enum MinerError {
    #[error("config field {field} is invalid: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error("correlation grid cannot be windowed: {source}")]
    Geometry {
        #[from]
        source: NumericsError,
    },
    #[error("scene pair io failed for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scene pair file {path} line {line} is not valid: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// One mined pseudo-positive scene pair.
///
/// Field order is the wire order:
/// `{"a", "span_a", "b", "span_b", "score"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePair {
    #[serde(rename = "a")]
    pub movie_a: MovieId,
    pub span_a: SceneSpan,
    #[serde(rename = "b")]
    pub movie_b: MovieId,
    pub span_b: SceneSpan,
    pub score: f64,
}

/// A movie pair the miner could not process, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiningSkip {
    pub movie_a: MovieId,
    pub movie_b: MovieId,
    pub reason: String,
}

/// Scores every aligned scene window between two encoded movies.
///
/// `e1` is `M x h`, `e2` is `N x h`; the result cell `(i, j)` is the mean
/// inner product between window `[i*stride, i*stride + window)` of movie A
/// and the same-shaped window of movie B.
pub fn scene_adjacency(e1: &Mat, e2: &Mat, cfg: &MiningConfig) -> Result<Mat, MinerError> {
    cfg.validate()?;
    let grid = e1.dot(&e2.t());
    Ok(avg_pool(&grid, cfg.window, cfg.stride)?)
}

/// Ranks the score grid and greedily selects non-overlapping scene pairs.
///
/// Returns `(span_a, span_b, score)` triples in acceptance order.
pub fn select_scene_pairs(grid: &Mat, cfg: &MiningConfig) -> Vec<(SceneSpan, SceneSpan, f64)> {
    let mut candidates: Vec<(usize, usize, f64)> = grid
        .indexed_iter()
        .map(|((i, j), &score)| (i, j, score + 0.0)) // fold -0.0 into +0.0 so equal scores tie
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let examine = ((cfg.keep_fraction * candidates.len() as f64).ceil() as usize).min(candidates.len());

    let mut accepted: Vec<(SceneSpan, SceneSpan, f64)> = Vec::new();
    for &(i, j, score) in &candidates[..examine] {
        let span_a = SceneSpan::new(i * cfg.stride, i * cfg.stride + cfg.window);
        let span_b = SceneSpan::new(j * cfg.stride, j * cfg.stride + cfg.window);
        let clashes = accepted
            .iter()
            .any(|(sa, sb, _)| span_a.overlap(*sa) > 0 || span_b.overlap(*sb) > 0);
        if !clashes {
            accepted.push((span_a, span_b, score));
        }
    }
    accepted
}

/// Mines scene pairs for every positive movie pair.
///
/// Pairs are processed in canonical `(a, b)` order regardless of input
/// order; pairs labeled negative are ignored. Per-pair failures — a movie
/// missing from the corpus, a width mismatch with the encoder, or a movie
/// shorter than the mining window — become [`MiningSkip`] records instead of
/// errors, so one short movie cannot abort a corpus-wide run.
pub fn mine_corpus(
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
    params: &MovieSimParams,
    pairs: &[SimilarityPair],
    cfg: &MiningConfig,
) -> Result<(Vec<ScenePair>, Vec<MiningSkip>), MinerError> {
    cfg.validate()?;
    let mut ordered: Vec<SimilarityPair> = pairs
        .iter()
        .filter(|p| p.label == 1)
        .map(|p| p.clone().canonical())
        .collect();
    ordered.sort_by(|x, y| x.key().cmp(&y.key()));
    ordered.dedup_by(|x, y| x.key() == y.key());

    let mut mined = Vec::new();
    let mut skips = Vec::new();
    let mut embedded: BTreeMap<MovieId, Mat> = BTreeMap::new();

    for pair in &ordered {
        let skip = |reason: String, skips: &mut Vec<MiningSkip>| {
            skips.push(MiningSkip {
                movie_a: pair.movie_a.clone(),
                movie_b: pair.movie_b.clone(),
                reason,
            });
        };
        let fetch = |movie_id: &MovieId, embedded: &mut BTreeMap<MovieId, Mat>| -> Result<(), String> {
            if embedded.contains_key(movie_id) {
                return Ok(());
            }
            let matrix = matrices
                .get(movie_id)
                .ok_or_else(|| format!("movie {movie_id} has no embedding matrix"))?;
            if matrix.dim() != params.d_in() {
                return Err(format!(
                    "movie {movie_id} has embedding width {}, encoder expects {}",
                    matrix.dim(),
                    params.d_in()
                ));
            }
            if matrix.shot_count() < cfg.window {
                return Err(format!(
                    "movie {movie_id} has {} shots, shorter than the {}-shot mining window",
                    matrix.shot_count(),
                    cfg.window
                ));
            }
            embedded.insert(movie_id.clone(), embed_shots_eval(params, &matrix.to_f64()));
            Ok(())
        };
        if let Err(reason) = fetch(&pair.movie_a, &mut embedded).and_then(|()| fetch(&pair.movie_b, &mut embedded)) {
            skip(reason, &mut skips);
            continue;
        }
        let grid = scene_adjacency(&embedded[&pair.movie_a], &embedded[&pair.movie_b], cfg)?;
        for (span_a, span_b, score) in select_scene_pairs(&grid, cfg) {
            mined.push(ScenePair {
                movie_a: pair.movie_a.clone(),
                span_a,
                movie_b: pair.movie_b.clone(),
                span_b,
                score,
            });
        }
    }
    Ok((mined, skips))
}

/// Writes mined pairs as one JSON object per line.
pub fn write_scene_pairs_jsonl(path: &Path, pairs: &[ScenePair]) -> Result<(), MinerError> {
    let io_err = |source| MinerError::Io { path: path.to_path_buf(), source };
    let mut out = Vec::new();
    for pair in pairs {
        serde_json::to_writer(&mut out, pair).expect("scene pair serializes");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

/// Reads mined pairs written by [`write_scene_pairs_jsonl`].
pub fn read_scene_pairs_jsonl(path: &Path) -> Result<Vec<ScenePair>, MinerError> {
    let io_err = |source| MinerError::Io { path: path.to_path_buf(), source };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|source| MinerError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}
