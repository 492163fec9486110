//! Downstream evaluation of scene representations.
//!
//! Every evaluation compares two arms on the same labeled scenes: the
//! trained scene encoder, and a baseline that simply averages the raw shot
//! embeddings over the span. Retrieval ranks gallery scenes by L2 distance;
//! probes are small MLPs trained on frozen features; multi-label tasks score
//! mean average precision; shot-boundary detection concatenates four
//! single-shot encodings and trains a binary probe.
//!
//! Submodules: [`metrics`] (retrieval, AP, mAP), [`probe`] (MLP heads),
//! [`sbd`] (boundary detection). Everything here is deterministic given its
//! inputs and seed.

pub mod metrics;
pub mod probe;
pub mod sbd;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, LabeledScene, MovieId, SceneLabel, SceneSpan, ShotEmbeddingMatrix};
use crate::encoder::{encode_scene_value, EncoderConfig, EncoderError, SceneEncoderParams};
use crate::numerics::Mat;

/// Failure in an evaluation stage.
#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("scene span could not be read: {source}")]
    Corpus {
        #[from]
        source: CorpusError,
    },
    #[error("scene references movie {movie_id} which has no embedding matrix")]
    UnknownMovie { movie_id: MovieId },
    #[error("scene encoding failed: {source}")]
    Encoder {
        #[from]
        source: EncoderError,
    },
    #[error("cannot retrieve {k} neighbors from a gallery of {gallery}")]
    KTooLarge { k: usize, gallery: usize },
    #[error("{what} is empty; nothing to evaluate")]
    EmptyInstance { what: &'static str },
    #[error("{what}: left side has {left}, right side has {right}")]
    ShapeMismatch { what: &'static str, left: usize, right: usize },
    #[error("truth entry at ({row}, {col}) is {value}; binary truth must be 0 or 1")]
    TruthNotBinary { row: usize, col: usize, value: f64 },
    #[error("{what} has no positives; average precision is undefined")]
    NoPositives { what: String },
    #[error("task {task_id} carries a {found} label; this evaluation needs {expected}")]
    LabelKind { task_id: String, expected: &'static str, found: &'static str },
    #[error("probe config field {field} is invalid: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error("classification needs at least 2 classes, found {classes}")]
    SingleClass { classes: usize },
    #[error("boundary sample in movie {movie_id} spans {found} shots; exactly {expected} are required")]
    SpanLength { movie_id: MovieId, expected: usize, found: usize },
    #[error("metric value for {task_id} is {value}, which is not finite")]
    NonFiniteMetric { task_id: String, value: f64 },
}

/// Which number a [`MetricReport`] carries.
///
/// Serialized as a compact string: `precision@5`, `top1`, `mse`, `map`,
/// `ap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    PrecisionAtK(usize),
    Top1,
    Mse,
    MeanAveragePrecision,
    AveragePrecision,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::PrecisionAtK(k) => write!(f, "precision@{k}"),
            MetricKind::Top1 => write!(f, "top1"),
            MetricKind::Mse => write!(f, "mse"),
            MetricKind::MeanAveragePrecision => write!(f, "map"),
            MetricKind::AveragePrecision => write!(f, "ap"),
        }
    }
}

impl Serialize for MetricKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if let Some(k) = s.strip_prefix("precision@") {
            let k = k.parse().map_err(|_| serde::de::Error::custom(format!("bad precision k in {s}")))?;
            return Ok(MetricKind::PrecisionAtK(k));
        }
        match s.as_str() {
            "top1" => Ok(MetricKind::Top1),
            "mse" => Ok(MetricKind::Mse),
            "map" => Ok(MetricKind::MeanAveragePrecision),
            "ap" => Ok(MetricKind::AveragePrecision),
            other => Err(serde::de::Error::custom(format!("unknown metric kind {other}"))),
        }
    }
}

/// One evaluated number: which task, which metric, the value, and how many
/// samples stand behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task_id: String,
    pub metric: MetricKind,
    pub value: f64,
    pub support: usize,
}

impl MetricReport {
    /// Builds a report, rejecting non-finite values and empty support.
    pub fn new(task_id: impl Into<String>, metric: MetricKind, value: f64, support: usize) -> Result<Self, EvalError> {
        let task_id = task_id.into();
        if !value.is_finite() {
            return Err(EvalError::NonFiniteMetric { task_id, value });
        }
        if support == 0 {
            return Err(EvalError::EmptyInstance { what: "metric support" });
        }
        Ok(Self { task_id, metric, value, support })
    }
}

/// Arithmetic mean of the shot rows in `span`: the no-training baseline
/// scene representation.
pub fn mean_pool_scene(matrix: &ShotEmbeddingMatrix, span: SceneSpan) -> Result<Vec<f64>, EvalError> {
    let rows = matrix.span_to_f64(span)?;
    let n = rows.nrows() as f64;
    Ok(rows.sum_axis(ndarray::Axis(0)).iter().map(|v| v / n).collect())
}

/// A way of turning a scene span into one feature vector.
///
/// The two arms of every comparison: the trained encoder versus plain mean
/// pooling of the raw shot embeddings.
pub enum SceneFeaturizer<'a> {
    Encoder { params: &'a SceneEncoderParams, cfg: &'a EncoderConfig },
    MeanPool,
}

impl SceneFeaturizer<'_> {
    /// Output width given the corpus embedding width.
    pub fn out_dim(&self, d_in: usize) -> usize {
        match self {
            SceneFeaturizer::Encoder { cfg, .. } => cfg.out_dim,
            SceneFeaturizer::MeanPool => d_in,
        }
    }

    /// Short name for logs and report task ids.
    pub fn arm_name(&self) -> &'static str {
        match self {
            SceneFeaturizer::Encoder { .. } => "encoder",
            SceneFeaturizer::MeanPool => "mean-pool",
        }
    }

    /// Features for one span of one movie.
    pub fn features(&self, matrix: &ShotEmbeddingMatrix, span: SceneSpan) -> Result<Vec<f64>, EvalError> {
        match self {
            SceneFeaturizer::Encoder { params, cfg } => {
                let tokens = matrix.span_to_f64(span)?;
                let out = encode_scene_value(params, cfg, &tokens)?;
                Ok(out.row(0).to_vec())
            }
            SceneFeaturizer::MeanPool => mean_pool_scene(matrix, span),
        }
    }
}

/// Extracts one feature row per labeled scene, in input order.
pub fn scene_features(
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
    scenes: &[LabeledScene],
    featurizer: &SceneFeaturizer<'_>,
) -> Result<Mat, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::EmptyInstance { what: "labeled scene list" });
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let matrix = matrices
            .get(&scene.movie_id)
            .ok_or_else(|| EvalError::UnknownMovie { movie_id: scene.movie_id.clone() })?;
        rows.push(featurizer.features(matrix, scene.span)?);
    }
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Mat::from_shape_vec((scenes.len(), dim), flat).expect("rows share one width"))
}

fn label_kind_name(label: &SceneLabel) -> &'static str {
    match label {
        SceneLabel::Class(_) => "class",
        SceneLabel::Real(_) => "real",
        SceneLabel::Bits(_) => "bits",
    }
}

/// Class index of every scene; errors if any label is not a class.
pub fn class_labels(scenes: &[LabeledScene]) -> Result<Vec<usize>, EvalError> {
    scenes
        .iter()
        .map(|s| match &s.label {
            SceneLabel::Class(c) => Ok(*c),
            other => Err(EvalError::LabelKind {
                task_id: s.task_id.clone(),
                expected: "class",
                found: label_kind_name(other),
            }),
        })
        .collect()
}

/// Real-valued target of every scene; errors if any label is not real.
pub fn real_labels(scenes: &[LabeledScene]) -> Result<Vec<f64>, EvalError> {
    scenes
        .iter()
        .map(|s| match &s.label {
            SceneLabel::Real(v) => Ok(*v),
            other => Err(EvalError::LabelKind {
                task_id: s.task_id.clone(),
                expected: "real",
                found: label_kind_name(other),
            }),
        })
        .collect()
}

/// Bit matrix of every scene's tags, `n x n_labels`; errors on non-bit
/// labels or a bit index at or past `n_labels`.
pub fn bit_labels(scenes: &[LabeledScene], n_labels: usize) -> Result<Mat, EvalError> {
    let mut out = Mat::zeros((scenes.len(), n_labels));
    for (row, scene) in scenes.iter().enumerate() {
        match &scene.label {
            SceneLabel::Bits(bits) => {
                for &bit in bits {
                    if bit >= n_labels {
                        return Err(EvalError::ShapeMismatch {
                            what: "bit index vs label count",
                            left: bit,
                            right: n_labels,
                        });
                    }
                    out[[row, bit]] = 1.0;
                }
            }
            other => {
                return Err(EvalError::LabelKind {
                    task_id: scene.task_id.clone(),
                    expected: "bits",
                    found: label_kind_name(other),
                })
            }
        }
    }
    Ok(out)
}

/// Rank of every movie in the corpus's sorted order; the parity of this rank
/// drives train/test splitting.
pub fn movie_ranks(matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>) -> BTreeMap<MovieId, usize> {
    matrices.keys().enumerate().map(|(i, id)| (id.clone(), i)).collect()
}

/// Splits scene indices into (train, test) by movie-rank parity: scenes of
/// even-ranked movies train, odd-ranked movies test. Whole movies stay on
/// one side, so probes are scored on unseen movies.
pub fn split_by_movie_parity(
    scenes: &[LabeledScene],
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let ranks = movie_ranks(matrices);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let rank = ranks
            .get(&scene.movie_id)
            .ok_or_else(|| EvalError::UnknownMovie { movie_id: scene.movie_id.clone() })?;
        if rank % 2 == 0 {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    Ok((train, test))
}

/// Splits class-labeled scene indices into (gallery, queries), alternating
/// within each class so both sides see every class the task has at least two
/// examples of.
pub fn split_for_retrieval(scenes: &[LabeledScene]) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let labels = class_labels(scenes)?;
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    let mut gallery = Vec::new();
    let mut queries = Vec::new();
    for (i, &class) in labels.iter().enumerate() {
        let seen = per_class.entry(class).or_insert(0);
        if *seen % 2 == 0 {
            gallery.push(i);
        } else {
            queries.push(i);
        }
        *seen += 1;
    }
    Ok((gallery, queries))
}

/// Gathers the rows of `features` listed in `idx`.
pub fn take_rows(features: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros((idx.len(), features.ncols()));
    for (slot, &i) in idx.iter().enumerate() {
        out.row_mut(slot).assign(&features.row(i));
    }
    out
}

/// Gathers the elements of `values` listed in `idx`.
pub fn take_values<T: Clone>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i].clone()).collect()
}
