//! Shot-boundary detection as a probe task.
//!
//! Each sample is a window of exactly four consecutive shots, labeled 1 when
//! a scene boundary falls at the window's center and 0 otherwise. Every shot
//! in the window is featurized as a length-1 scene, the four vectors are
//! concatenated, and a binary probe is trained on the movies of even rank.
//! The reported number is the average precision of the positive class on the
//! held-out odd-rank movies, so a boundary detector is judged by ranking,
//! not by a threshold.

use std::collections::BTreeMap;

use crate::corpus::{LabeledScene, MovieId, SceneLabel, SceneSpan, ShotEmbeddingMatrix};
use crate::eval::metrics::average_precision;
use crate::eval::probe::{train_probe, probe_scores, ProbeConfig, ProbeLabels, ProbeObjective};
use crate::eval::{
    split_by_movie_parity, take_values, EvalError, MetricKind, MetricReport, SceneFeaturizer,
};
use crate::numerics::Mat;

/// Shots in one boundary-detection window.
pub const BOUNDARY_WINDOW: usize = 4;

fn binary_label(sample: &LabeledScene, index: usize) -> Result<bool, EvalError> {
    match &sample.label {
        SceneLabel::Class(0) => Ok(false),
        SceneLabel::Class(1) => Ok(true),
        SceneLabel::Class(c) => {
            Err(EvalError::TruthNotBinary { row: index, col: 0, value: *c as f64 })
        }
        other => Err(EvalError::LabelKind {
            task_id: sample.task_id.clone(),
            expected: "class",
            found: match other {
                SceneLabel::Real(_) => "real",
                _ => "bits",
            },
        }),
    }
}

/// Concatenation of the four per-shot feature vectors of one window.
fn window_features(
    matrix: &ShotEmbeddingMatrix,
    span: SceneSpan,
    featurizer: &SceneFeaturizer<'_>,
) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::new();
    for shot in span.start..span.end {
        out.extend(featurizer.features(matrix, SceneSpan::new(shot, shot + 1))?);
    }
    Ok(out)
}

/// Trains a binary boundary probe on even-rank movies and reports the
/// average precision of the positive class on odd-rank movies.
pub fn sbd_evaluate(
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
    samples: &[LabeledScene],
    featurizer: &SceneFeaturizer<'_>,
    probe_cfg: &ProbeConfig,
    seed: u64,
) -> Result<MetricReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInstance { what: "boundary sample list" });
    }
    if probe_cfg.objective != ProbeObjective::BinaryCrossEntropy {
        return Err(EvalError::BadConfig {
            field: "objective",
            reason: format!("boundary detection trains a binary probe, not {:?}", probe_cfg.objective),
        });
    }

    let mut truth = Vec::with_capacity(samples.len());
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for (index, sample) in samples.iter().enumerate() {
        if sample.span.len() != BOUNDARY_WINDOW {
            return Err(EvalError::SpanLength {
                movie_id: sample.movie_id.clone(),
                expected: BOUNDARY_WINDOW,
                found: sample.span.len(),
            });
        }
        truth.push(binary_label(sample, index)?);
        let matrix = matrices
            .get(&sample.movie_id)
            .ok_or_else(|| EvalError::UnknownMovie { movie_id: sample.movie_id.clone() })?;
        rows.push(window_features(matrix, sample.span, featurizer)?);
    }
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let features = Mat::from_shape_vec((samples.len(), dim), flat).expect("windows share one width");

    let (train_idx, test_idx) = split_by_movie_parity(samples, matrices)?;
    if train_idx.is_empty() {
        return Err(EvalError::EmptyInstance { what: "boundary train split" });
    }
    if test_idx.is_empty() {
        return Err(EvalError::EmptyInstance { what: "boundary test split" });
    }

    let train_features = crate::eval::take_rows(&features, &train_idx);
    let mut train_bits = Mat::zeros((train_idx.len(), 1));
    for (slot, &i) in train_idx.iter().enumerate() {
        train_bits[[slot, 0]] = f64::from(truth[i]);
    }
    let (params, _) = train_probe(&train_features, &ProbeLabels::Bits(train_bits), probe_cfg, seed)?;

    let test_features = crate::eval::take_rows(&features, &test_idx);
    let scores: Vec<f64> = probe_scores(&params, &test_features).column(0).to_vec();
    let test_truth = take_values(&truth, &test_idx);
    let ap = average_precision(&scores, &test_truth)?;
    MetricReport::new(&samples[0].task_id, MetricKind::AveragePrecision, ap, test_idx.len())
}
