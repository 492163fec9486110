//! Deterministic synthetic corpus generator.
//!
//! Movies are grouped into themes. Each theme owns an orthonormal centroid
//! direction and a "scene motif" vector orthogonal to it; a movie's shots are
//! its theme centroid plus isotropic noise, except for one contiguous
//! signature scene whose shots are the motif plus the same noise. The motif
//! is scaled above unit norm (`motif_norm`, default 1.5) so that signature
//! scenes are the strongest shared content between same-theme movies — mined
//! scene pairs should land on them rather than on generic theme background.
//!
//! Alongside the embeddings, the generator emits ground truth (theme of each
//! movie, signature span) and labeled scene samples for four downstream
//! tasks:
//!
//! * `theme` — classify a 9-shot span's theme.
//! * `signature_overlap` — regress the fraction of a span lying inside the
//!   signature scene.
//! * `tags` — multi-label bits: the theme bit, one of two parity bits, and a
//!   "touches the signature scene" bit.
//! * `boundary` — classify whether a 4-shot window straddles a scene change
//!   (the edge of the signature scene) or sits inside homogeneous content.
//!
//! Everything is a pure function of the seed: distinct RNG streams cover
//! theme geometry, movie structure, shot noise, synopsis noise, and scene
//! sampling, so changing one consumer leaves the others untouched.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    CorpusError, CorpusManifest, LabeledScene, MovieId, MovieRecord, SceneLabel, SceneSpan,
    ShotEmbeddingMatrix,
};
use crate::rng::stream_rng;

/// Task id of the span-theme classification samples.
pub const TASK_THEME: &str = "theme";
/// Task id of the signature-overlap regression samples.
pub const TASK_SIGNATURE_OVERLAP: &str = "signature_overlap";
/// Task id of the multi-label tagging samples.
pub const TASK_TAGS: &str = "tags";
/// Task id of the 4-shot boundary-detection samples.
pub const TASK_BOUNDARY: &str = "boundary";

/// Knobs of the generator. `Default` matches the reference desk corpus:
/// 40 movies, 8 themes, 60–120 shots, 32-dim embeddings, noise 0.1, seed 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_movies: usize,
    pub n_themes: usize,
    pub shots_min: usize,
    pub shots_max: usize,
    pub d_in: usize,
    /// Standard deviation of the isotropic per-shot noise.
    pub noise: f64,
    pub seed: u64,
    /// Length of each movie's signature scene, in shots.
    pub signature_len: usize,
    /// L2 norm given to each theme's scene motif (centroids have norm 1).
    pub motif_norm: f64,
    /// Labeled spans sampled per movie and per span-level task.
    pub scenes_per_movie: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_movies: 40,
            n_themes: 8,
            shots_min: 60,
            shots_max: 120,
            d_in: 32,
            noise: 0.1,
            seed: 0,
            signature_len: 9,
            motif_norm: 1.5,
            scenes_per_movie: 6,
        }
    }
}

/// Ground truth recorded next to a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub theme_names: Vec<String>,
    pub theme_of: BTreeMap<MovieId, usize>,
    pub signature_span: BTreeMap<MovieId, SceneSpan>,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticTruth {
    pub fn save(&self, path: &std::path::Path) -> Result<(), CorpusError> {
        super::write_json_pretty(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
        serde_json::from_str(&text)
            .map_err(|source| CorpusError::Json { path: path.to_owned(), source })
    }
}

/// Everything the generator produces, still in memory.
pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    pub matrices: BTreeMap<MovieId, ShotEmbeddingMatrix>,
    pub truth: SyntheticTruth,
    pub scenes: Vec<LabeledScene>,
}

// RNG stream ids (see crate::rng).
const STREAM_THEMES: u64 = 0;
const STREAM_STRUCTURE: u64 = 1;
const STREAM_SHOTS: u64 = 2;
const STREAM_SYNOPSIS: u64 = 3;
const STREAM_SCENES: u64 = 4;

fn standard_normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.sample(StandardNormal))
}

/// Draws `n` orthonormal directions in `R^d` by Gram-Schmidt on Gaussian
/// samples. `d >= n` makes degeneracy a probability-zero event; the redraw
/// loop covers it anyway.
fn orthonormal_directions(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = standard_normal_vec(rng, d);
        for b in &basis {
            let proj = v.dot(b);
            v = v - b * proj;
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    basis
}

/// Generates a corpus per `cfg`. Fixed config (including seed) yields
/// bit-identical output.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus, CorpusError> {
    if cfg.n_movies == 0 {
        return Err(CorpusError::NoMovies);
    }
    if cfg.n_themes < 2 {
        return Err(CorpusError::TooFewThemes { n_themes: cfg.n_themes });
    }
    if cfg.d_in < cfg.n_themes {
        return Err(CorpusError::DimBelowThemes { d_in: cfg.d_in, n_themes: cfg.n_themes });
    }
    // Signature spans keep a 2-shot margin from both movie edges so that
    // 4-shot boundary windows around them always fit.
    let min_required = cfg.signature_len + 4;
    if cfg.shots_min < min_required || cfg.shots_min > cfg.shots_max {
        return Err(CorpusError::BadShotRange {
            shots_min: cfg.shots_min,
            shots_max: cfg.shots_max,
            min_required,
        });
    }

    // Theme geometry: orthonormal centroids; motifs orthogonal to their own
    // centroid, scaled to motif_norm.
    let mut theme_rng = stream_rng(cfg.seed, STREAM_THEMES);
    let centroids = orthonormal_directions(&mut theme_rng, cfg.n_themes, cfg.d_in);
    let motifs: Vec<Array1<f64>> = centroids
        .iter()
        .map(|c| {
            let mut m = standard_normal_vec(&mut theme_rng, cfg.d_in);
            let proj = m.dot(c);
            m = m - c * proj;
            let norm = m.dot(&m).sqrt();
            m * (cfg.motif_norm / norm)
        })
        .collect();
    let theme_names: Vec<String> = (0..cfg.n_themes).map(|t| format!("theme_{t:02}")).collect();

    // Movie structure: balanced theme assignment, shuffled so that theme is
    // independent of the movie index (downstream splits key on the index).
    let mut structure_rng = stream_rng(cfg.seed, STREAM_STRUCTURE);
    let mut themes: Vec<usize> = (0..cfg.n_movies).map(|i| i % cfg.n_themes).collect();
    themes.shuffle(&mut structure_rng);
    let width = (cfg.n_movies.max(2) - 1).ilog10() as usize + 1;
    let movie_ids: Vec<MovieId> =
        (0..cfg.n_movies).map(|i| MovieId::new(format!("movie_{i:0width$}"))).collect();
    let shot_counts: Vec<usize> =
        (0..cfg.n_movies).map(|_| structure_rng.gen_range(cfg.shots_min..=cfg.shots_max)).collect();
    let signature_starts: Vec<usize> = shot_counts
        .iter()
        .map(|&m| structure_rng.gen_range(2..=m - cfg.signature_len - 2))
        .collect();

    // Shot embeddings.
    let mut shot_rng = stream_rng(cfg.seed, STREAM_SHOTS);
    let mut matrices = BTreeMap::new();
    for i in 0..cfg.n_movies {
        let theme = themes[i];
        let sig = SceneSpan::new(signature_starts[i], signature_starts[i] + cfg.signature_len);
        let mut data = Array2::<f32>::zeros((shot_counts[i], cfg.d_in));
        for s in 0..shot_counts[i] {
            let base =
                if s >= sig.start && s < sig.end { &motifs[theme] } else { &centroids[theme] };
            for c in 0..cfg.d_in {
                let n: f64 = shot_rng.sample(StandardNormal);
                data[(s, c)] = (base[c] + cfg.noise * n) as f32;
            }
        }
        matrices.insert(
            movie_ids[i].clone(),
            ShotEmbeddingMatrix::new(movie_ids[i].clone(), data)?,
        );
    }

    // Synopsis embeddings: theme one-hot plus attenuated noise, so inner
    // products rank same-theme movies first.
    let mut synopsis_rng = stream_rng(cfg.seed, STREAM_SYNOPSIS);
    let synopses: Vec<Vec<f64>> = (0..cfg.n_movies)
        .map(|i| {
            (0..cfg.n_themes)
                .map(|t| {
                    let base = if t == themes[i] { 1.0 } else { 0.0 };
                    let n: f64 = synopsis_rng.sample(StandardNormal);
                    base + 0.1 * cfg.noise * n
                })
                .collect()
        })
        .collect();

    // more_like_this: same-theme movies ranked by distance between movie
    // centroids (mean shot embedding), ties broken by ascending id.
    let movie_centroids: Vec<Array1<f64>> = (0..cfg.n_movies)
        .map(|i| {
            let m = matrices[&movie_ids[i]].to_f64();
            m.mean_axis(ndarray::Axis(0)).expect("movie has shots")
        })
        .collect();
    let neighbor_lists: Vec<Vec<MovieId>> = (0..cfg.n_movies)
        .map(|i| {
            let mut same: Vec<(f64, &MovieId)> = (0..cfg.n_movies)
                .filter(|&j| j != i && themes[j] == themes[i])
                .map(|j| {
                    let diff = &movie_centroids[i] - &movie_centroids[j];
                    (diff.dot(&diff).sqrt(), &movie_ids[j])
                })
                .collect();
            same.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(b.1)));
            same.into_iter().map(|(_, id)| id.clone()).collect()
        })
        .collect();

    let movies: Vec<MovieRecord> = (0..cfg.n_movies)
        .map(|i| MovieRecord {
            movie_id: movie_ids[i].clone(),
            shot_count: shot_counts[i],
            genres: vec![theme_names[themes[i]].clone()],
            synopsis_embedding: Some(synopses[i].clone()),
            more_like_this: Some(neighbor_lists[i].clone()),
        })
        .collect();
    let embedding_files = movie_ids
        .iter()
        .map(|id| (id.clone(), CorpusManifest::default_embedding_path(id)))
        .collect();
    let manifest = CorpusManifest { version: 1, d_in: cfg.d_in, movies, embedding_files };
    manifest.validate()?;

    let truth = SyntheticTruth {
        theme_names,
        theme_of: movie_ids.iter().cloned().zip(themes.iter().cloned()).collect(),
        signature_span: movie_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                (id.clone(), SceneSpan::new(signature_starts[i], signature_starts[i] + cfg.signature_len))
            })
            .collect(),
        noise: cfg.noise,
        seed: cfg.seed,
    };

    let scenes = sample_labeled_scenes(cfg, &truth, &shot_counts, &movie_ids, &themes);

    Ok(SyntheticCorpus { manifest, matrices, truth, scenes })
}

fn sample_labeled_scenes(
    cfg: &SynthConfig,
    truth: &SyntheticTruth,
    shot_counts: &[usize],
    movie_ids: &[MovieId],
    themes: &[usize],
) -> Vec<LabeledScene> {
    let mut rng = stream_rng(cfg.seed, STREAM_SCENES);
    let span_len = cfg.signature_len;
    let mut scenes = Vec::new();
    for i in 0..cfg.n_movies {
        let id = &movie_ids[i];
        let sig = truth.signature_span[id];
        let shots = shot_counts[i];
        let random_span =
            |rng: &mut ChaCha8Rng| SceneSpan::new_from_start(rng.gen_range(0..=shots - span_len), span_len);

        // theme: the signature span plus random spans, all labeled with the
        // movie's theme.
        let mut theme_spans = vec![sig];
        for _ in 1..cfg.scenes_per_movie.max(1) {
            theme_spans.push(random_span(&mut rng));
        }
        for span in &theme_spans {
            scenes.push(LabeledScene {
                movie_id: id.clone(),
                span: *span,
                task_id: TASK_THEME.into(),
                label: SceneLabel::Class(themes[i]),
            });
        }

        // signature_overlap: fresh random spans, regression target = fraction
        // of the span lying inside the signature scene.
        for _ in 0..cfg.scenes_per_movie {
            let span = random_span(&mut rng);
            let frac = span.overlap(sig) as f64 / span.len() as f64;
            scenes.push(LabeledScene {
                movie_id: id.clone(),
                span,
                task_id: TASK_SIGNATURE_OVERLAP.into(),
                label: SceneLabel::Real(frac),
            });
        }

        // tags: theme bit, movie-index parity bit, signature-contact bit.
        for _ in 0..cfg.scenes_per_movie {
            let span = random_span(&mut rng);
            let mut bits = vec![themes[i], cfg.n_themes + i % 2];
            if span.overlap(sig) > 0 {
                bits.push(cfg.n_themes + 2);
            }
            scenes.push(LabeledScene {
                movie_id: id.clone(),
                span,
                task_id: TASK_TAGS.into(),
                label: SceneLabel::Bits(bits),
            });
        }

        // boundary: 4-shot windows centered on the two signature edges
        // (positives) and on the midpoints of the homogeneous stretches
        // before/after it (negatives), when those fit.
        let mut push_boundary = |b: usize, positive: bool| {
            scenes.push(LabeledScene {
                movie_id: id.clone(),
                span: SceneSpan::new(b - 2, b + 2),
                task_id: TASK_BOUNDARY.into(),
                label: SceneLabel::Class(positive as usize),
            });
        };
        push_boundary(sig.start, true);
        push_boundary(sig.end, true);
        if sig.start >= 4 {
            push_boundary((sig.start / 2).clamp(2, sig.start - 2), false);
        }
        if sig.end + 4 <= shots {
            push_boundary(((sig.end + shots) / 2).clamp(sig.end + 2, shots - 2), false);
        }
    }
    scenes
}

impl SceneSpan {
    fn new_from_start(start: usize, len: usize) -> Self {
        SceneSpan::new(start, start + len)
    }
}
