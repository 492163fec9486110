//! Movie-level similarity pseudo-labels from metadata.
//!
//! Three sources produce positive pairs: curated `more_like_this` neighbor
//! lists, synopsis-embedding inner products, and shared genres. Negatives are
//! uniform random unordered pairs excluded from the positive set. Pair lists
//! serialize as JSON lines `{"a": ..., "b": ..., "label": 0|1, "source": ...}`.

use std::collections::BTreeSet;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, MovieId};
use crate::rng::stream_rng;

// RNG stream ids (see crate::rng); the 100-band belongs to this module.
const STREAM_GENRE_PICKS: u64 = 100;
const STREAM_NEGATIVES: u64 = 101;

/// Where a positive pair's evidence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilaritySource {
    MoreLikeThis,
    Synopsis,
    Genre,
}

impl std::fmt::Display for SimilaritySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimilaritySource::MoreLikeThis => "more-like-this",
            SimilaritySource::Synopsis => "synopsis",
            SimilaritySource::Genre => "genre",
        })
    }
}

/// An unordered movie pair with a 0/1 similarity label.
///
/// `movie_a < movie_b` canonically; the pair is symmetric in role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityPair {
    #[serde(rename = "a")]
    pub movie_a: MovieId,
    #[serde(rename = "b")]
    pub movie_b: MovieId,
    pub label: u8,
    pub source: SimilaritySource,
}

impl SimilarityPair {
    fn from_parts(a: MovieId, b: MovieId, label: u8, source: SimilaritySource) -> Self {
        let (movie_a, movie_b) = if a <= b { (a, b) } else { (b, a) };
        Self { movie_a, movie_b, label, source }
    }

    /// The same pair with `movie_a <= movie_b`.
    pub fn canonical(self) -> Self {
        Self::from_parts(self.movie_a, self.movie_b, self.label, self.source)
    }

    /// Unordered identity of the pair.
    pub fn key(&self) -> (MovieId, MovieId) {
        if self.movie_a <= self.movie_b {
            (self.movie_a.clone(), self.movie_b.clone())
        } else {
            (self.movie_b.clone(), self.movie_a.clone())
        }
    }
}

/// Failures while deriving pairs.
#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("movie {movie_id} lacks {field}, required by the {source_kind} source")]
    MissingMetadata { movie_id: MovieId, field: &'static str, source_kind: SimilaritySource },
    #[error("movie {movie_id} (listed in more_like_this of {listed_by}) is not in the corpus")]
    UnknownNeighbor { movie_id: MovieId, listed_by: MovieId },
    #[error("corpus has {movies} movies; cannot sample {requested} negatives disjoint from {positives} positives")]
    NegativesExhausted { movies: usize, requested: usize, positives: usize },
    #[error("the {source_kind} source produced no positive pairs")]
    NoPositives { source_kind: SimilaritySource },
    #[error("i/o failure at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pair record at {path}:{line}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Positive pairs (label 1) for `source`, up to `k_per_movie` partners per
/// movie, deduplicated as unordered pairs.
///
/// * MoreLikeThis — the first `k` entries of each movie's ranked list.
/// * Synopsis — the `k` movies with the highest synopsis inner product; ties
///   break by ascending movie id.
/// * Genre — `k` movies sharing at least one genre, drawn uniformly at
///   random (seeded) from the candidates.
pub fn positive_pairs(
    manifest: &CorpusManifest,
    source: SimilaritySource,
    k_per_movie: usize,
    seed: u64,
) -> Result<Vec<SimilarityPair>, SimilarityError> {
    let mut rng = stream_rng(seed, STREAM_GENRE_PICKS);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    let mut push = |a: &MovieId, b: &MovieId| {
        let pair = SimilarityPair::from_parts(a.clone(), b.clone(), 1, source);
        if seen.insert(pair.key()) {
            pairs.push(pair);
        }
    };
    for movie in &manifest.movies {
        match source {
            SimilaritySource::MoreLikeThis => {
                let neighbors = movie.more_like_this.as_ref().ok_or_else(|| {
                    SimilarityError::MissingMetadata {
                        movie_id: movie.movie_id.clone(),
                        field: "more_like_this",
                        source_kind: source,
                    }
                })?;
                for n in neighbors.iter().take(k_per_movie) {
                    if manifest.record(n).is_err() {
                        return Err(SimilarityError::UnknownNeighbor {
                            movie_id: n.clone(),
                            listed_by: movie.movie_id.clone(),
                        });
                    }
                    push(&movie.movie_id, n);
                }
            }
            SimilaritySource::Synopsis => {
                let own = movie.synopsis_embedding.as_ref().ok_or_else(|| {
                    SimilarityError::MissingMetadata {
                        movie_id: movie.movie_id.clone(),
                        field: "synopsis_embedding",
                        source_kind: source,
                    }
                })?;
                let mut scored: Vec<(f64, &MovieId)> = Vec::new();
                for other in &manifest.movies {
                    if other.movie_id == movie.movie_id {
                        continue;
                    }
                    let theirs = other.synopsis_embedding.as_ref().ok_or_else(|| {
                        SimilarityError::MissingMetadata {
                            movie_id: other.movie_id.clone(),
                            field: "synopsis_embedding",
                            source_kind: source,
                        }
                    })?;
                    let ip: f64 = own.iter().zip(theirs).map(|(x, y)| x * y).sum();
                    scored.push((ip, &other.movie_id));
                }
                // Highest inner product first; ties by ascending movie id.
                scored.sort_by(|x, y| {
                    y.0.partial_cmp(&x.0).expect("finite inner products").then(x.1.cmp(y.1))
                });
                for (_, other) in scored.into_iter().take(k_per_movie) {
                    push(&movie.movie_id, other);
                }
            }
            SimilaritySource::Genre => {
                if movie.genres.is_empty() {
                    return Err(SimilarityError::MissingMetadata {
                        movie_id: movie.movie_id.clone(),
                        field: "genres",
                        source_kind: source,
                    });
                }
                let own: BTreeSet<&String> = movie.genres.iter().collect();
                let mut candidates: Vec<&MovieId> = manifest
                    .movies
                    .iter()
                    .filter(|other| {
                        other.movie_id != movie.movie_id
                            && other.genres.iter().any(|g| own.contains(g))
                    })
                    .map(|other| &other.movie_id)
                    .collect();
                // Uniform random same-genre partners, without replacement.
                for _ in 0..k_per_movie.min(candidates.len()) {
                    let at = rng.gen_range(0..candidates.len());
                    push(&movie.movie_id, candidates.swap_remove(at));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(SimilarityError::NoPositives { source_kind: source });
    }
    Ok(pairs)
}

/// `ceil(ratio · |positives|)` uniform random unordered pairs (label 0),
/// excluding self-pairs and every pair in `positives`. Deterministic in
/// `seed`. The returned order is the sampling order.
pub fn sample_negatives(
    manifest: &CorpusManifest,
    positives: &[SimilarityPair],
    ratio: f64,
    seed: u64,
) -> Result<Vec<SimilarityPair>, SimilarityError> {
    let ids: Vec<&MovieId> = manifest.movies.iter().map(|m| &m.movie_id).collect();
    let requested = (ratio * positives.len() as f64).ceil() as usize;
    let forbidden: BTreeSet<(MovieId, MovieId)> = positives.iter().map(|p| p.key()).collect();
    let total_pairs = ids.len() * ids.len().saturating_sub(1) / 2;
    let source = positives.first().map(|p| p.source).unwrap_or(SimilaritySource::MoreLikeThis);
    if total_pairs.saturating_sub(forbidden.len()) < requested {
        return Err(SimilarityError::NegativesExhausted {
            movies: ids.len(),
            requested,
            positives: forbidden.len(),
        });
    }
    let mut rng = stream_rng(seed, STREAM_NEGATIVES);
    let mut taken = BTreeSet::new();
    let mut negatives = Vec::with_capacity(requested);
    while negatives.len() < requested {
        let i = rng.gen_range(0..ids.len());
        let j = rng.gen_range(0..ids.len());
        if i == j {
            continue;
        }
        let pair = SimilarityPair::from_parts(ids[i].clone(), ids[j].clone(), 0, source);
        let key = pair.key();
        if forbidden.contains(&key) || !taken.insert(key) {
            continue;
        }
        negatives.push(pair);
    }
    Ok(negatives)
}

/// Writes pairs as JSON lines.
pub fn write_pairs_jsonl(path: &Path, pairs: &[SimilarityPair]) -> Result<(), SimilarityError> {
    let io_err = |source| SimilarityError::Io { path: path.to_owned(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)
            .map_err(|e| SimilarityError::Io { path: path.to_owned(), source: e.into() })?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

/// Reads pairs written by [`write_pairs_jsonl`].
pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<SimilarityPair>, SimilarityError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SimilarityError::Io { path: path.to_owned(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| SimilarityError::Parse {
                path: path.to_owned(),
                line: i + 1,
                source,
            })
        })
        .collect()
}
