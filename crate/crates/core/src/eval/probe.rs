//! Small MLP probes trained on frozen scene features.
//!
//! A probe measures how much task signal a frozen representation carries:
//! features go in, a few ReLU layers with dropout, a task head comes out.
//! Three objectives cover the label kinds — softmax cross-entropy for class
//! labels (reported as top-1 accuracy), squared error for real targets
//! (reported as MSE), and per-label binary cross-entropy for tag bits
//! (reported as mean average precision).
//!
//! Randomness: initialization draws from stream 600, epoch `e` shuffling and
//! dropout from stream `610 + e`, all under the caller's seed. Training is
//! plain mini-batch SGD; a trailing partial batch is kept. Zero epochs is
//! legal and evaluates the freshly initialized probe.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::metrics::multilabel_map;
use crate::eval::{EvalError, MetricKind, MetricReport};
use crate::numerics::{Mat, Optimizer, Tape, Var};
use crate::rng::stream_rng;

/// RNG stream for probe parameter initialization.
pub const STREAM_PROBE_INIT: u64 = 600;
/// RNG stream for epoch `e` is this base plus `e` (shuffle + dropout).
pub const STREAM_PROBE_EPOCH_BASE: u64 = 610;

/// Training loss of a probe; each objective pairs with one label kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeObjective {
    /// Multi-class heads: softmax cross-entropy over class logits.
    SoftmaxCrossEntropy,
    /// Scalar regression heads: mean squared error.
    SquaredError,
    /// Multi-label heads: mean binary cross-entropy on logits.
    BinaryCrossEntropy,
}

/// Targets for a probe, one entry per feature row.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeLabels {
    /// One class index per sample.
    Classes(Vec<usize>),
    /// One real target per sample.
    Reals(Vec<f64>),
    /// An `n x n_labels` 0/1 matrix of tag bits.
    Bits(Mat),
}

impl ProbeLabels {
    /// Number of labeled samples.
    pub fn len(&self) -> usize {
        match self {
            ProbeLabels::Classes(v) => v.len(),
            ProbeLabels::Reals(v) => v.len(),
            ProbeLabels::Bits(m) => m.nrows(),
        }
    }

    /// True when no samples are present.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Head width these labels demand: `max class + 1`, `1`, or the bit
    /// count.
    pub fn head_dim(&self) -> Result<usize, EvalError> {
        match self {
            ProbeLabels::Classes(v) => {
                let distinct: BTreeSet<usize> = v.iter().copied().collect();
                if distinct.len() < 2 {
                    return Err(EvalError::SingleClass { classes: distinct.len() });
                }
                Ok(v.iter().max().map_or(0, |&m| m + 1))
            }
            ProbeLabels::Reals(_) => Ok(1),
            ProbeLabels::Bits(m) => Ok(m.ncols()),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            ProbeLabels::Classes(_) => "class",
            ProbeLabels::Reals(_) => "real",
            ProbeLabels::Bits(_) => "bits",
        }
    }

    /// The objective each label kind trains with.
    pub fn objective(&self) -> ProbeObjective {
        match self {
            ProbeLabels::Classes(_) => ProbeObjective::SoftmaxCrossEntropy,
            ProbeLabels::Reals(_) => ProbeObjective::SquaredError,
            ProbeLabels::Bits(_) => ProbeObjective::BinaryCrossEntropy,
        }
    }

    /// The metric each label kind reports.
    pub fn metric(&self) -> MetricKind {
        match self {
            ProbeLabels::Classes(_) => MetricKind::Top1,
            ProbeLabels::Reals(_) => MetricKind::Mse,
            ProbeLabels::Bits(_) => MetricKind::MeanAveragePrecision,
        }
    }
}

/// Probe hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Hidden layer widths; empty makes a linear probe.
    pub hidden_dims: Vec<usize>,
    /// SGD learning rate.
    pub lr: f64,
    /// Mini-batch size; the trailing partial batch still trains.
    pub batch_size: usize,
    /// Full passes over the training set; zero skips training.
    pub epochs: usize,
    /// Dropout probability after every hidden activation.
    pub dropout: f64,
    /// Loss to train with; must match the label kind.
    pub objective: ProbeObjective,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![512, 512],
            lr: 0.01,
            batch_size: 128,
            epochs: 400,
            dropout: 0.25,
            objective: ProbeObjective::SoftmaxCrossEntropy,
        }
    }
}

impl ProbeConfig {
    fn validate(&self) -> Result<(), EvalError> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(EvalError::BadConfig { field: "lr", reason: format!("{} is not a positive finite rate", self.lr) });
        }
        if self.batch_size == 0 {
            return Err(EvalError::BadConfig { field: "batch_size", reason: "must be at least 1".into() });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EvalError::BadConfig { field: "dropout", reason: format!("{} is outside [0, 1)", self.dropout) });
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(EvalError::BadConfig { field: "hidden_dims", reason: "zero-width hidden layer".into() });
        }
        Ok(())
    }
}

/// Learnable tensors of a probe: `(weight, bias)` per affine layer, the last
/// layer being the task head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub layers: Vec<(Mat, Mat)>,
}

fn layer_dims(in_dim: usize, hidden_dims: &[usize], head_dim: usize) -> Vec<(usize, usize)> {
    let widths: Vec<usize> =
        std::iter::once(in_dim).chain(hidden_dims.iter().copied()).chain(std::iter::once(head_dim)).collect();
    widths.windows(2).map(|w| (w[0], w[1])).collect()
}

impl ProbeParams {
    /// Draws fresh layers, uniform in `±1/sqrt(fan_in)`, from stream 600.
    pub fn init(in_dim: usize, hidden_dims: &[usize], head_dim: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, STREAM_PROBE_INIT);
        let mut uniform = |rows: usize, cols: usize, bound: f64| -> Mat {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Mat::from_shape_vec((rows, cols), data).expect("length matches rows*cols")
        };
        let layers = layer_dims(in_dim, hidden_dims, head_dim)
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (uniform(fan_in, fan_out, bound), uniform(1, fan_out, bound))
            })
            .collect();
        Self { layers }
    }

    /// Feature width this probe expects.
    pub fn in_dim(&self) -> usize {
        self.layers[0].0.nrows()
    }
}

/// Differentiable forward pass; dropout only when `rng` is given.
fn forward_tape(
    tape: &mut Tape,
    vars: &[(Var, Var)],
    x: &Mat,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Var {
    let mut h = tape.constant(x.clone());
    let mut dropout = dropout;
    let last = vars.len() - 1;
    for (i, &(w, b)) in vars.iter().enumerate() {
        h = tape.affine(h, w, b);
        if i < last {
            h = tape.relu(h);
            if let Some((rng, p)) = dropout.as_mut() {
                h = tape.dropout(h, *p, rng);
            }
        }
    }
    h
}

/// Evaluation-mode scores (logits or regression outputs), no dropout.
pub fn probe_scores(params: &ProbeParams, features: &Mat) -> Mat {
    let last = params.layers.len() - 1;
    let mut h = features.clone();
    for (i, (w, b)) in params.layers.iter().enumerate() {
        let mut next = h.dot(w);
        next += &b.row(0);
        if i < last {
            next.mapv_inplace(|v| v.max(0.0));
        }
        h = next;
    }
    h
}

fn check_objective(cfg: &ProbeConfig, labels: &ProbeLabels) -> Result<(), EvalError> {
    if cfg.objective != labels.objective() {
        return Err(EvalError::BadConfig {
            field: "objective",
            reason: format!("{:?} cannot train on {} labels", cfg.objective, labels.kind_name()),
        });
    }
    Ok(())
}

/// Trains a probe on frozen `features` with mini-batch SGD.
///
/// Returns the trained parameters and the mean training loss of each epoch.
/// With `epochs = 0` the returned probe is exactly the stream-600
/// initialization and the loss list is empty.
pub fn train_probe(
    features: &Mat,
    labels: &ProbeLabels,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(ProbeParams, Vec<f64>), EvalError> {
    cfg.validate()?;
    check_objective(cfg, labels)?;
    if features.nrows() == 0 {
        return Err(EvalError::EmptyInstance { what: "probe feature matrix" });
    }
    if features.nrows() != labels.len() {
        return Err(EvalError::ShapeMismatch {
            what: "probe features vs labels",
            left: features.nrows(),
            right: labels.len(),
        });
    }
    let head_dim = labels.head_dim()?;
    let mut params = ProbeParams::init(features.ncols(), &cfg.hidden_dims, head_dim, seed);
    let mut optimizer = Optimizer::sgd(cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(seed, STREAM_PROBE_EPOCH_BASE + epoch as u64);
        let mut order: Vec<usize> = (0..features.nrows()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = crate::eval::take_rows(features, batch);
            let mut tape = Tape::new();
            let vars: Vec<(Var, Var)> =
                params.layers.iter().map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone()))).collect();
            let dropout = if cfg.dropout > 0.0 { Some((&mut rng, cfg.dropout)) } else { None };
            let out = forward_tape(&mut tape, &vars, &x, dropout);
            let loss = match labels {
                ProbeLabels::Classes(classes) => {
                    let targets: Vec<usize> = batch.iter().map(|&i| classes[i]).collect();
                    tape.cross_entropy_mean(out, &targets)
                }
                ProbeLabels::Reals(reals) => {
                    let target: Vec<f64> = batch.iter().map(|&i| reals[i]).collect();
                    let target = Mat::from_shape_vec((batch.len(), 1), target).expect("one column");
                    tape.squared_error_mean(out, &target)
                }
                ProbeLabels::Bits(bits) => {
                    let target = crate::eval::take_rows(bits, batch);
                    tape.bce_with_logits_mean(out, &target)
                }
            };
            loss_sum += tape.value(loss)[[0, 0]] * batch.len() as f64;
            let grads = tape.backward(loss);
            let grad_list: Vec<Mat> =
                vars.iter().flat_map(|&(w, b)| [grads.wrt(w), grads.wrt(b)]).collect();
            let mut targets: Vec<&mut Mat> =
                params.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect();
            optimizer.step(&mut targets, &grad_list);
        }
        losses.push(loss_sum / features.nrows() as f64);
    }
    Ok((params, losses))
}

/// Scores a trained probe on `features` and reports the label kind's metric:
/// top-1 accuracy (argmax, ties to the lowest index), MSE, or mean average
/// precision over the tag columns.
pub fn eval_probe(
    params: &ProbeParams,
    features: &Mat,
    labels: &ProbeLabels,
    task_id: &str,
) -> Result<MetricReport, EvalError> {
    if features.nrows() == 0 {
        return Err(EvalError::EmptyInstance { what: "probe evaluation set" });
    }
    if features.nrows() != labels.len() {
        return Err(EvalError::ShapeMismatch {
            what: "probe features vs labels",
            left: features.nrows(),
            right: labels.len(),
        });
    }
    let scores = probe_scores(params, features);
    let value = match labels {
        ProbeLabels::Classes(classes) => {
            let mut correct = 0usize;
            for (row, &class) in scores.rows().into_iter().zip(classes.iter()) {
                let mut best = 0usize;
                for (j, &s) in row.iter().enumerate() {
                    if s > row[best] {
                        best = j;
                    }
                }
                correct += usize::from(best == class);
            }
            correct as f64 / classes.len() as f64
        }
        ProbeLabels::Reals(reals) => {
            let mse: f64 = scores
                .column(0)
                .iter()
                .zip(reals.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / reals.len() as f64;
            mse
        }
        ProbeLabels::Bits(bits) => multilabel_map(&scores, bits)?.map,
    };
    MetricReport::new(task_id, labels.metric(), value, features.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_cfg(objective: ProbeObjective) -> ProbeConfig {
        ProbeConfig { hidden_dims: vec![16], lr: 0.1, batch_size: 8, epochs: 40, dropout: 0.0, objective }
    }

    /// Two well-separated Gaussian blobs in 4 dimensions.
    fn blobs(n_per_class: usize, seed: u64) -> (Mat, Vec<usize>) {
        let mut rng = stream_rng(seed, 0);
        let n = 2 * n_per_class;
        let mut data = Vec::with_capacity(n * 4);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            for _ in 0..4 {
                data.push(center + rng.gen_range(-0.5..0.5));
            }
            labels.push(class);
        }
        (Mat::from_shape_vec((n, 4), data).expect("length matches"), labels)
    }

    #[test]
    fn classifies_separable_blobs() {
        let (features, classes) = blobs(20, 11);
        let labels = ProbeLabels::Classes(classes);
        let cfg = fast_cfg(ProbeObjective::SoftmaxCrossEntropy);
        let (params, losses) = train_probe(&features, &labels, &cfg, 0).expect("train");
        assert!(losses.first().expect("epochs ran") > losses.last().expect("epochs ran"));
        let report = eval_probe(&params, &features, &labels, "blobs").expect("eval");
        assert_eq!(report.metric, MetricKind::Top1);
        assert_eq!(report.support, 40);
        assert!(report.value >= 0.95, "top-1 {} on separable blobs", report.value);
    }

    #[test]
    fn regresses_a_linear_map_below_target_variance() {
        let mut rng = stream_rng(12, 0);
        let n = 60;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let features = Mat::from_shape_vec((n, 3), data).expect("length matches");
        let targets: Vec<f64> =
            features.rows().into_iter().map(|r| 0.7 * r[0] - 1.3 * r[1] + 0.4 * r[2] + 0.2).collect();
        let mean = targets.iter().sum::<f64>() / n as f64;
        let variance = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64;

        let labels = ProbeLabels::Reals(targets);
        let mut cfg = fast_cfg(ProbeObjective::SquaredError);
        cfg.epochs = 80;
        let (params, _) = train_probe(&features, &labels, &cfg, 0).expect("train");
        let report = eval_probe(&params, &features, &labels, "linear-map").expect("eval");
        assert_eq!(report.metric, MetricKind::Mse);
        assert!(report.value < variance, "mse {} should beat the mean predictor {variance}", report.value);
    }

    #[test]
    fn ranks_separable_tags_near_perfectly() {
        let (features, classes) = blobs(15, 13);
        let n = classes.len();
        let mut bits = Mat::zeros((n, 2));
        for (i, &c) in classes.iter().enumerate() {
            bits[[i, c]] = 1.0;
        }
        let labels = ProbeLabels::Bits(bits);
        let cfg = fast_cfg(ProbeObjective::BinaryCrossEntropy);
        let (params, _) = train_probe(&features, &labels, &cfg, 0).expect("train");
        let report = eval_probe(&params, &features, &labels, "tags").expect("eval");
        assert_eq!(report.metric, MetricKind::MeanAveragePrecision);
        assert!(report.value >= 0.95, "map {} on separable tags", report.value);
    }

    #[test]
    fn zero_epochs_returns_the_initialization_untouched() {
        let (features, classes) = blobs(5, 14);
        let labels = ProbeLabels::Classes(classes);
        let mut cfg = fast_cfg(ProbeObjective::SoftmaxCrossEntropy);
        cfg.epochs = 0;
        let (params, losses) = train_probe(&features, &labels, &cfg, 9).expect("train");
        assert!(losses.is_empty());
        let fresh = ProbeParams::init(4, &cfg.hidden_dims, 2, 9);
        assert_eq!(params, fresh);
        let report = eval_probe(&params, &features, &labels, "untrained").expect("eval");
        assert!(report.value.is_finite());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (features, classes) = blobs(8, 15);
        let labels = ProbeLabels::Classes(classes);
        let mut cfg = fast_cfg(ProbeObjective::SoftmaxCrossEntropy);
        cfg.epochs = 3;
        cfg.dropout = 0.3;
        let (a, la) = train_probe(&features, &labels, &cfg, 5).expect("train");
        let (b, lb) = train_probe(&features, &labels, &cfg, 5).expect("train");
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = train_probe(&features, &labels, &cfg, 6).expect("train");
        assert_ne!(a, c, "a different seed must move the parameters");
    }

    #[test]
    fn rejects_mismatched_shapes_objectives_and_degenerate_classes() {
        let (features, classes) = blobs(4, 16);
        let cfg = fast_cfg(ProbeObjective::SoftmaxCrossEntropy);

        let short = ProbeLabels::Classes(classes[..5].to_vec());
        assert!(matches!(
            train_probe(&features, &short, &cfg, 0),
            Err(EvalError::ShapeMismatch { what: "probe features vs labels", .. })
        ));

        let single = ProbeLabels::Classes(vec![3; features.nrows()]);
        assert!(matches!(train_probe(&features, &single, &cfg, 0), Err(EvalError::SingleClass { classes: 1 })));

        let reals = ProbeLabels::Reals(vec![0.0; features.nrows()]);
        assert!(matches!(
            train_probe(&features, &reals, &cfg, 0),
            Err(EvalError::BadConfig { field: "objective", .. })
        ));

        let mut bad = cfg.clone();
        bad.dropout = 1.0;
        let labels = ProbeLabels::Classes(classes);
        assert!(matches!(
            train_probe(&features, &labels, &bad, 0),
            Err(EvalError::BadConfig { field: "dropout", .. })
        ));
    }

    #[test]
    fn top1_ties_resolve_to_the_lowest_index() {
        // A zero-weight probe scores every class identically; argmax must
        // then pick class 0, so accuracy equals the share of zero labels.
        let params = ProbeParams { layers: vec![(Mat::zeros((2, 3)), Mat::zeros((1, 3)))] };
        let features = Mat::from_shape_vec((4, 2), vec![1.0; 8]).expect("length matches");
        let labels = ProbeLabels::Classes(vec![0, 1, 0, 2]);
        let report = eval_probe(&params, &features, &labels, "ties").expect("eval");
        assert_eq!(report.value, 0.5);
    }
}
