//! Retrieval and ranking metrics with exact, oracle-checkable definitions.
//!
//! Nearest neighbors are ordered by ascending L2 distance with ties broken
//! by ascending gallery index. Average precision is the un-interpolated
//! variant: the mean of the precision values observed at each positive's
//! rank, under descending-score ordering with ties broken by ascending
//! sample index. Both rules make every result reproducible to the bit.

use std::collections::BTreeMap;

use crate::eval::EvalError;
use crate::numerics::Mat;

/// Precision restricted to queries of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrecision {
    /// Mean share of matching-label neighbors for this class's queries.
    pub value: f64,
    /// Number of queries of this class.
    pub support: usize,
}

/// Everything `knn_retrieve` measures.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    /// Per query, the gallery indices of its `k` nearest neighbors in rank
    /// order.
    pub neighbors: Vec<Vec<usize>>,
    /// Mean precision@k over all queries.
    pub overall: f64,
    /// Precision@k restricted to each query class, with support counts —
    /// tiny classes are reported, not suppressed.
    pub per_class: BTreeMap<usize, ClassPrecision>,
}

/// Retrieves the `k` nearest gallery rows for every query row and scores
/// label agreement.
pub fn knn_retrieve(
    query_features: &Mat,
    query_labels: &[usize],
    gallery_features: &Mat,
    gallery_labels: &[usize],
    k: usize,
) -> Result<RetrievalOutcome, EvalError> {
    if query_features.nrows() != query_labels.len() {
        return Err(EvalError::ShapeMismatch {
            what: "query features vs labels",
            left: query_features.nrows(),
            right: query_labels.len(),
        });
    }
    if gallery_features.nrows() != gallery_labels.len() {
        return Err(EvalError::ShapeMismatch {
            what: "gallery features vs labels",
            left: gallery_features.nrows(),
            right: gallery_labels.len(),
        });
    }
    if query_features.nrows() == 0 {
        return Err(EvalError::EmptyInstance { what: "query set" });
    }
    if query_features.ncols() != gallery_features.ncols() {
        return Err(EvalError::ShapeMismatch {
            what: "query width vs gallery width",
            left: query_features.ncols(),
            right: gallery_features.ncols(),
        });
    }
    if k == 0 || k > gallery_features.nrows() {
        return Err(EvalError::KTooLarge { k, gallery: gallery_features.nrows() });
    }

    let mut neighbors = Vec::with_capacity(query_features.nrows());
    let mut per_class_hits: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for (qi, q) in query_features.rows().into_iter().enumerate() {
        // Squared L2 orders identically to L2 and keeps the math exact.
        let mut ranked: Vec<(f64, usize)> = gallery_features
            .rows()
            .into_iter()
            .enumerate()
            .map(|(gi, g)| {
                let d2: f64 = q.iter().zip(g.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, gi)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let top: Vec<usize> = ranked[..k].iter().map(|&(_, gi)| gi).collect();
        let hits = top.iter().filter(|&&gi| gallery_labels[gi] == query_labels[qi]).count();
        let precision = hits as f64 / k as f64;
        total += precision;
        let entry = per_class_hits.entry(query_labels[qi]).or_insert((0.0, 0));
        entry.0 += precision;
        entry.1 += 1;
        neighbors.push(top);
    }

    let per_class = per_class_hits
        .into_iter()
        .map(|(class, (sum, support))| (class, ClassPrecision { value: sum / support as f64, support }))
        .collect();
    Ok(RetrievalOutcome { neighbors, overall: total / query_labels.len() as f64, per_class })
}

/// Average precision of one score column: mean of precision at each
/// positive's rank, scores descending, ties by ascending index.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::ShapeMismatch {
            what: "scores vs truth",
            left: scores.len(),
            right: truth.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::EmptyInstance { what: "score list" });
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(EvalError::NoPositives { what: "score list".into() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // `+ 0.0` folds -0.0 into +0.0 so numerically equal scores tie (and the
    // index rule decides), while total_cmp keeps the order total.
    order.sort_by(|&a, &b| (scores[b] + 0.0).total_cmp(&(scores[a] + 0.0)).then(a.cmp(&b)));
    let mut seen_positives = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if truth[idx] {
            seen_positives += 1;
            sum += seen_positives as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Per-label APs and their mean over a multi-label task.
#[derive(Debug, Clone, PartialEq)]
pub struct MapOutcome {
    /// Mean AP over the evaluated labels.
    pub map: f64,
    /// `(label index, AP, positive count)` for every evaluated label.
    pub per_label: Vec<(usize, f64, usize)>,
    /// Labels with no positives — skipped, and reported here.
    pub skipped: Vec<usize>,
}

/// Mean average precision over the label columns of a multi-label task.
///
/// `truth` must be a 0/1 matrix of the same shape as `scores`. Columns
/// without a single positive cannot define an AP; they are skipped and
/// listed in the outcome rather than silently dropped.
pub fn multilabel_map(scores: &Mat, truth: &Mat) -> Result<MapOutcome, EvalError> {
    if scores.dim() != truth.dim() {
        return Err(EvalError::ShapeMismatch {
            what: "score matrix vs truth matrix",
            left: scores.len(),
            right: truth.len(),
        });
    }
    if scores.nrows() == 0 || scores.ncols() == 0 {
        return Err(EvalError::EmptyInstance { what: "multi-label score matrix" });
    }
    for ((row, col), &value) in truth.indexed_iter() {
        if value != 0.0 && value != 1.0 {
            return Err(EvalError::TruthNotBinary { row, col, value });
        }
    }
    let mut per_label = Vec::new();
    let mut skipped = Vec::new();
    for label in 0..scores.ncols() {
        let column: Vec<f64> = scores.column(label).to_vec();
        let bits: Vec<bool> = truth.column(label).iter().map(|&v| v == 1.0).collect();
        let positives = bits.iter().filter(|&&b| b).count();
        if positives == 0 {
            skipped.push(label);
            continue;
        }
        per_label.push((label, average_precision(&column, &bits)?, positives));
    }
    if per_label.is_empty() {
        return Err(EvalError::NoPositives { what: "every label column".into() });
    }
    let map = per_label.iter().map(|(_, ap, _)| ap).sum::<f64>() / per_label.len() as f64;
    Ok(MapOutcome { map, per_label, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn mat(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let data: Vec<f64> = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Mat::from_shape_vec((rows, cols), data).expect("length matches")
    }

    #[test]
    fn nearest_neighbor_two_point_gallery() {
        let gallery = mat(2, 2, |i, _| if i == 0 { 0.0 } else { 10.0 });
        let queries = mat(1, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let out = knn_retrieve(&queries, &[7], &gallery, &[7, 9], 1).expect("retrieve");
        assert_eq!(out.neighbors, vec![vec![0]]);
        assert_eq!(out.overall, 1.0);
        assert_eq!(out.per_class[&7].support, 1);
    }

    #[test]
    fn uniform_gallery_labels_score_one_at_any_k() {
        let mut rng = stream_rng(1, 0);
        let gallery = mat(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        let queries = mat(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        for k in [1, 3, 8] {
            let out = knn_retrieve(&queries, &[2; 4], &gallery, &[2; 8], k).expect("retrieve");
            assert_eq!(out.overall, 1.0, "k={k}");
        }
    }

    #[test]
    fn matches_exhaustive_sort_oracle() {
        let mut rng = stream_rng(2, 0);
        for case in 0..50 {
            let gallery = mat(20, 4, |_, _| rng.gen_range(-1.0..1.0));
            let queries = mat(6, 4, |_, _| rng.gen_range(-1.0..1.0));
            let g_labels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..3)).collect();
            let q_labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
            let k = rng.gen_range(1..=10);
            let out = knn_retrieve(&queries, &q_labels, &gallery, &g_labels, k).expect("retrieve");

            let mut want_total = 0.0;
            for (qi, q) in queries.rows().into_iter().enumerate() {
                let mut dists: Vec<(f64, usize)> = gallery
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(gi, g)| {
                        (q.iter().zip(g.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), gi)
                    })
                    .collect();
                dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let want: Vec<usize> = dists[..k].iter().map(|&(_, gi)| gi).collect();
                assert_eq!(out.neighbors[qi], want, "case {case}, query {qi}");
                want_total +=
                    want.iter().filter(|&&gi| g_labels[gi] == q_labels[qi]).count() as f64 / k as f64;
            }
            assert!((out.overall - want_total / 6.0).abs() < 1e-12);
            let support_sum: usize = out.per_class.values().map(|c| c.support).sum();
            assert_eq!(support_sum, 6);
        }
    }

    #[test]
    fn distance_ties_break_by_gallery_index() {
        // Two gallery points equidistant from the query.
        let gallery = mat(2, 1, |i, _| if i == 0 { 1.0 } else { -1.0 });
        let queries = mat(1, 1, |_, _| 0.0);
        let out = knn_retrieve(&queries, &[0], &gallery, &[0, 0], 2).expect("retrieve");
        assert_eq!(out.neighbors[0], vec![0, 1]);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let gallery = mat(3, 2, |_, _| 0.0);
        let queries = mat(1, 2, |_, _| 0.0);
        assert!(matches!(
            knn_retrieve(&queries, &[0], &gallery, &[0, 0, 0], 4),
            Err(EvalError::KTooLarge { k: 4, gallery: 3 })
        ));
    }

    #[test]
    fn ap_of_alternating_relevance_is_five_sixths() {
        // Scores already in rank order: relevances [1, 0, 1].
        let ap = average_precision(&[3.0, 2.0, 1.0], &[true, false, true]).expect("ap");
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_closed_forms() {
        // Perfect ranking.
        let ap = average_precision(&[5.0, 4.0, 3.0, 2.0], &[true, true, false, false]).expect("ap");
        assert_eq!(ap, 1.0);
        // Single positive ranked last of n.
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let mut truth = vec![false; n];
        truth[n - 1] = true;
        let ap = average_precision(&scores, &truth).expect("ap");
        assert!((ap - 1.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn constant_scores_rank_by_index() {
        // All scores tie; the tie rule ranks by ascending index, so AP is
        // computable by hand: positives at indices 1 and 3 of 4.
        let ap = average_precision(&[0.5; 4], &[false, true, false, true]).expect("ap");
        let want = (1.0 / 2.0 + 2.0 / 4.0) / 2.0;
        assert!((ap - want).abs() < 1e-15);
    }

    /// Brute-force AP: integrate precision over the explicit ranked list.
    fn ap_oracle(scores: &[f64], truth: &[bool]) -> f64 {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut hits = 0;
        let mut acc = 0.0;
        for (rank, &i) in idx.iter().enumerate() {
            if truth[i] {
                hits += 1;
                acc += hits as f64 / (rank + 1) as f64;
            }
        }
        acc / truth.iter().filter(|&&t| t).count() as f64
    }

    #[test]
    fn ap_matches_oracle_on_random_instances() {
        let mut rng = stream_rng(3, 0);
        for case in 0..100 {
            let n = rng.gen_range(1..=30);
            // Quantized scores force ties in half the cases.
            let quantize = case % 2 == 0;
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    if quantize { (v * 3.0).round() / 3.0 } else { v }
                })
                .collect();
            let mut truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if !truth.iter().any(|&t| t) {
                truth[0] = true;
            }
            let got = average_precision(&scores, &truth).expect("ap");
            let want = ap_oracle(&scores, &truth);
            assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn map_averages_and_reports_skipped_columns() {
        let scores = mat(3, 3, |i, j| (i + j) as f64);
        // Column 0: positives everywhere -> AP 1. Column 1: no positives ->
        // skipped. Column 2: single positive at the lowest-scoring row.
        let truth = mat(3, 3, |i, j| match j {
            0 => 1.0,
            1 => 0.0,
            _ => f64::from(u8::from(i == 0)),
        });
        let out = multilabel_map(&scores, &truth).expect("map");
        assert_eq!(out.skipped, vec![1]);
        assert_eq!(out.per_label.len(), 2);
        assert_eq!(out.per_label[0], (0, 1.0, 3));
        let (label, ap, positives) = out.per_label[1];
        assert_eq!((label, positives), (2, 1));
        assert!((ap - 1.0 / 3.0).abs() < 1e-15, "column 2 positive ranks last: {ap}");
        assert!((out.map - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn map_rejects_bad_truth_and_shapes() {
        let scores = mat(2, 2, |_, _| 0.0);
        let bad_shape = mat(2, 3, |_, _| 0.0);
        assert!(matches!(
            multilabel_map(&scores, &bad_shape),
            Err(EvalError::ShapeMismatch { .. })
        ));
        let bad_truth = mat(2, 2, |i, j| if i == 1 && j == 1 { 0.5 } else { 1.0 });
        assert!(matches!(
            multilabel_map(&scores, &bad_truth),
            Err(EvalError::TruthNotBinary { row: 1, col: 1, .. })
        ));
        let no_pos = mat(2, 2, |_, _| 0.0);
        assert!(matches!(
            multilabel_map(&scores, &no_pos),
            Err(EvalError::NoPositives { .. })
        ));
    }
}
