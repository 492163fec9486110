//! Pair classifier trained on movie-level similarity labels.
//!
//! Each movie is a matrix of per-shot embeddings. A shared two-layer encoder
//! maps every shot to a learned space; the cross-correlation grid between two
//! movies' encoded shots is average-pooled, max-pooled, flattened, and scored
//! by a linear head as similar / not-similar. Training the head end to end
//! forces the shot encoder to place shots from related movies near each other,
//! which is what the scene miner later exploits.
//!
//! Shot matrices are padded (or truncated) to a fixed length *before*
//! encoding, so the correlation grid has a fixed shape; with zero biases a
//! zero padding row encodes to a zero row. Evaluation-mode helpers skip both
//! padding and dropout — the miner wants one embedding per real shot.
//!
//! RNG streams: 200 parameter init, `210 + epoch` shuffling and dropout.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointError, TensorMap};
use crate::corpus::{MovieId, ShotEmbeddingMatrix};
use crate::numerics::{avg_pool, max_pool, pooled_shape, Mat, NumericsError, Optimizer, Tape, Var};
use crate::rng::stream_rng;
use crate::similarity::SimilarityPair;

const STREAM_INIT: u64 = 200;
const STREAM_EPOCH_BASE: u64 = 210;

/// Hyperparameters for the pair classifier.
///
/// Defaults are the published full-scale settings; the desk preset shrinks
/// them so the pipeline runs in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovieSimConfig {
    /// Shot count every movie is padded or truncated to before encoding.
    pub pad_len: usize,
    /// Width of the shot encoder's hidden and output layers.
    pub hidden_dim: usize,
    /// Average-pooling window over the correlation grid.
    pub k_avg: usize,
    /// Average-pooling stride.
    pub s_avg: usize,
    /// Max-pooling window applied after average pooling.
    pub k_max: usize,
    /// Max-pooling stride.
    pub s_max: usize,
    /// Dropout probability between the encoder's two layers during training.
    pub dropout: f64,
    /// SGD learning rate.
    pub lr: f64,
    /// Mini-batch size (a final partial batch is kept).
    pub batch_size: usize,
    /// Number of passes over the pair list.
    pub epochs: usize,
    /// Master seed for init, shuffling, and dropout.
    pub seed: u64,
}

impl Default for MovieSimConfig {
    fn default() -> Self {
        Self {
            pad_len: 1024,
            hidden_dim: 512,
            k_avg: 16,
            s_avg: 8,
            k_max: 16,
            s_max: 8,
            dropout: 0.5,
            lr: 0.1,
            batch_size: 256,
            epochs: 20,
            seed: 0,
        }
    }
}

impl MovieSimConfig {
    /// Side length of the pooled correlation grid.
    pub fn pooled_side(&self) -> Result<usize, MovieSimError> {
        let side = (self.pad_len, self.pad_len);
        let after_avg = pooled_shape(side, self.k_avg, self.s_avg)
            .map_err(|source| MovieSimError::PoolingGeometry { stage: "average", source })?;
        let (rows, _) = pooled_shape(after_avg, self.k_max, self.s_max)
            .map_err(|source| MovieSimError::PoolingGeometry { stage: "max", source })?;
        Ok(rows)
    }

    /// Input width of the classifier head (pooled grid, flattened).
    pub fn flatten_dim(&self) -> Result<usize, MovieSimError> {
        let side = self.pooled_side()?;
        Ok(side * side)
    }

    /// Rejects configurations that cannot train.
    pub fn validate(&self) -> Result<(), MovieSimError> {
        if self.pad_len == 0 {
            return Err(MovieSimError::BadConfig { field: "pad_len", reason: "must be at least 1".into() });
        }
        if self.hidden_dim == 0 {
            return Err(MovieSimError::BadConfig { field: "hidden_dim", reason: "must be at least 1".into() });
        }
        if self.batch_size == 0 {
            return Err(MovieSimError::BadConfig { field: "batch_size", reason: "must be at least 1".into() });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MovieSimError::BadConfig {
                field: "dropout",
                reason: format!("{} is outside [0, 1)", self.dropout),
            });
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(MovieSimError::BadConfig { field: "lr", reason: format!("{} is not a valid rate", self.lr) });
        }
        self.flatten_dim()?;
        Ok(())
    }
}

/// Failure while building or training the pair classifier.
#[derive(Debug, thiserror::Error)]
pub enum MovieSimError {
    #[error("config field {field} is invalid: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error("{stage} pooling geometry is impossible: {source}")]
    PoolingGeometry { stage: &'static str, source: NumericsError },
    #[error("pair list is empty")]
    NoPairs,
    #[error("pair list has {positives} positives and {negatives} negatives; training needs both classes")]
    SingleClassPairs { positives: usize, negatives: usize },
    #[error("pair references movie {movie_id} which has no embedding matrix")]
    UnknownMovie { movie_id: MovieId },
    #[error("movie {movie_id} has embedding width {found}, model expects {expected}")]
    DimMismatch { movie_id: MovieId, expected: usize, found: usize },
    #[error("forward pass failed for pair ({movie_a}, {movie_b}): {source}")]
    Forward { movie_a: MovieId, movie_b: MovieId, source: NumericsError },
    #[error("checkpoint does not match this model: {source}")]
    Checkpoint {
        #[from]
        source: CheckpointError,
    },
}

/// Learnable tensors of the pair classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MovieSimParams {
    pub fc1_w: Mat,
    pub fc1_b: Mat,
    pub fc2_w: Mat,
    pub fc2_b: Mat,
    pub out_w: Mat,
    pub out_b: Mat,
}

fn uniform_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Mat::from_shape_vec((rows, cols), data).expect("length matches rows*cols")
}

impl MovieSimParams {
    /// Draws fresh parameters, uniform in `±1/sqrt(fan_in)` per layer.
    pub fn init(d_in: usize, cfg: &MovieSimConfig) -> Result<Self, MovieSimError> {
        cfg.validate()?;
        let flatten = cfg.flatten_dim()?;
        let h = cfg.hidden_dim;
        let mut rng = stream_rng(cfg.seed, STREAM_INIT);
        let b1 = 1.0 / (d_in as f64).sqrt();
        let b2 = 1.0 / (h as f64).sqrt();
        let b3 = 1.0 / (flatten as f64).sqrt();
        Ok(Self {
            fc1_w: uniform_mat(&mut rng, d_in, h, b1),
            fc1_b: uniform_mat(&mut rng, 1, h, b1),
            fc2_w: uniform_mat(&mut rng, h, h, b2),
            fc2_b: uniform_mat(&mut rng, 1, h, b2),
            out_w: uniform_mat(&mut rng, flatten, 2, b3),
            out_b: uniform_mat(&mut rng, 1, 2, b3),
        })
    }

    /// Embedding width this model was built for.
    pub fn d_in(&self) -> usize {
        self.fc1_w.nrows()
    }

    /// Checkpoint entries in fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("fc1_w", &self.fc1_w),
            ("fc1_b", &self.fc1_b),
            ("fc2_w", &self.fc2_w),
            ("fc2_b", &self.fc2_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
        ]
    }

    /// Rebuilds parameters from a loaded checkpoint, shape-checked against
    /// `d_in` and `cfg`.
    pub fn from_tensor_map(mut map: TensorMap, d_in: usize, cfg: &MovieSimConfig) -> Result<Self, MovieSimError> {
        let flatten = cfg.flatten_dim()?;
        let h = cfg.hidden_dim;
        let params = Self {
            fc1_w: map.take("fc1_w", d_in, h)?,
            fc1_b: map.take("fc1_b", 1, h)?,
            fc2_w: map.take("fc2_w", h, h)?,
            fc2_b: map.take("fc2_b", 1, h)?,
            out_w: map.take("out_w", flatten, 2)?,
            out_b: map.take("out_b", 1, 2)?,
        };
        map.finish()?;
        Ok(params)
    }

    fn grads_in_order(&self, grads: &crate::numerics::Gradients, vars: &MovieSimVars) -> Vec<Mat> {
        vec![
            grads.wrt(vars.fc1_w),
            grads.wrt(vars.fc1_b),
            grads.wrt(vars.fc2_w),
            grads.wrt(vars.fc2_b),
            grads.wrt(vars.out_w),
            grads.wrt(vars.out_b),
        ]
    }
}

/// Tape handles for one training step's parameters.
pub struct MovieSimVars {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl MovieSimVars {
    /// Registers every parameter as a tape leaf.
    pub fn leaf(tape: &mut Tape, params: &MovieSimParams) -> Self {
        Self {
            fc1_w: tape.leaf(params.fc1_w.clone()),
            fc1_b: tape.leaf(params.fc1_b.clone()),
            fc2_w: tape.leaf(params.fc2_w.clone()),
            fc2_b: tape.leaf(params.fc2_b.clone()),
            out_w: tape.leaf(params.out_w.clone()),
            out_b: tape.leaf(params.out_b.clone()),
        }
    }
}

/// Zero-pads `x` to `pad_len` rows, or truncates to the first `pad_len`.
pub fn pad_shot_matrix(x: &Mat, pad_len: usize) -> Mat {
    let d = x.ncols();
    let mut out = Mat::zeros((pad_len, d));
    let keep = x.nrows().min(pad_len);
    out.slice_mut(ndarray::s![..keep, ..]).assign(&x.slice(ndarray::s![..keep, ..]));
    out
}

/// Encodes shot rows on the tape: `relu(x fc1 + b1)` (dropout in training
/// mode) `fc2 + b2`. Padding, when wanted, must happen before this call.
pub fn embed_shots(
    tape: &mut Tape,
    vars: &MovieSimVars,
    x: &Mat,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Var {
    let x = tape.constant(x.clone());
    let h = tape.affine(x, vars.fc1_w, vars.fc1_b);
    let h = tape.relu(h);
    let h = match dropout {
        Some((rng, p)) => tape.dropout(h, p, rng),
        None => h,
    };
    tape.affine(h, vars.fc2_w, vars.fc2_b)
}

/// Evaluation-mode shot encoding without the tape (no padding, no dropout).
pub fn embed_shots_eval(params: &MovieSimParams, x: &Mat) -> Mat {
    let mut h = x.dot(&params.fc1_w);
    h += &params.fc1_b.row(0);
    h.mapv_inplace(|v| v.max(0.0));
    let mut e = h.dot(&params.fc2_w);
    e += &params.fc2_b.row(0);
    e
}

/// Full differentiable path for one padded pair: correlation grid, average
/// then max pooling, flatten, linear head. Returns 1x2 logits
/// (column 1 = similar).
pub fn pair_logits(
    tape: &mut Tape,
    vars: &MovieSimVars,
    cfg: &MovieSimConfig,
    a: &Mat,
    b: &Mat,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<Var, NumericsError> {
    let pa = pad_shot_matrix(a, cfg.pad_len);
    let pb = pad_shot_matrix(b, cfg.pad_len);
    let ea = embed_shots(tape, vars, &pa, dropout.as_mut().map(|(r, p)| (&mut **r, *p)));
    let eb = embed_shots(tape, vars, &pb, dropout.as_mut().map(|(r, p)| (&mut **r, *p)));
    let ebt = tape.transpose(eb);
    let grid = tape.matmul(ea, ebt);
    let pooled = tape.avg_pool2d(grid, cfg.k_avg, cfg.s_avg)?;
    let pooled = tape.max_pool2d(pooled, cfg.k_max, cfg.s_max)?;
    let flat = tape.flatten_row(pooled);
    Ok(tape.affine(flat, vars.out_w, vars.out_b))
}

/// Evaluation-mode logits for one pair, computed without the tape.
pub fn pair_logits_eval(
    params: &MovieSimParams,
    cfg: &MovieSimConfig,
    a: &Mat,
    b: &Mat,
) -> Result<[f64; 2], NumericsError> {
    let ea = embed_shots_eval(params, &pad_shot_matrix(a, cfg.pad_len));
    let eb = embed_shots_eval(params, &pad_shot_matrix(b, cfg.pad_len));
    let grid = ea.dot(&eb.t());
    let pooled = avg_pool(&grid, cfg.k_avg, cfg.s_avg)?;
    let pooled = max_pool(&pooled, cfg.k_max, cfg.s_max)?;
    let flat = Mat::from_shape_vec((1, pooled.len()), pooled.iter().copied().collect())
        .expect("flatten preserves length");
    let mut logits = flat.dot(&params.out_w);
    logits += &params.out_b.row(0);
    Ok([logits[[0, 0]], logits[[0, 1]]])
}

/// One epoch's training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// Mean per-pair training loss across the epoch.
    pub loss: f64,
    /// Evaluation-mode accuracy over all pairs at epoch end.
    pub acc: f64,
}

struct ResolvedPair<'a> {
    movie_a: &'a MovieId,
    movie_b: &'a MovieId,
    a: Mat,
    b: Mat,
    label: u8,
}

fn resolve_pairs<'a>(
    matrices: &'a BTreeMap<MovieId, ShotEmbeddingMatrix>,
    pairs: &'a [SimilarityPair],
    d_in: usize,
) -> Result<Vec<ResolvedPair<'a>>, MovieSimError> {
    let lookup = |movie_id: &'a MovieId| -> Result<&'a ShotEmbeddingMatrix, MovieSimError> {
        matrices.get(movie_id).ok_or_else(|| MovieSimError::UnknownMovie { movie_id: movie_id.clone() })
    };
    let mut out = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let ma = lookup(&pair.movie_a)?;
        let mb = lookup(&pair.movie_b)?;
        for m in [ma, mb] {
            if m.dim() != d_in {
                return Err(MovieSimError::DimMismatch {
                    movie_id: m.movie_id.clone(),
                    expected: d_in,
                    found: m.dim(),
                });
            }
        }
        out.push(ResolvedPair {
            movie_a: &pair.movie_a,
            movie_b: &pair.movie_b,
            a: ma.to_f64(),
            b: mb.to_f64(),
            label: pair.label,
        });
    }
    Ok(out)
}

/// Evaluation-mode accuracy of `params` over `pairs` (argmax vs label).
fn eval_accuracy(
    params: &MovieSimParams,
    cfg: &MovieSimConfig,
    pairs: &[ResolvedPair<'_>],
) -> Result<f64, MovieSimError> {
    let mut correct = 0usize;
    for pair in pairs {
        let [l0, l1] = pair_logits_eval(params, cfg, &pair.a, &pair.b).map_err(|source| {
            MovieSimError::Forward { movie_a: pair.movie_a.clone(), movie_b: pair.movie_b.clone(), source }
        })?;
        let predicted = u8::from(l1 > l0);
        if predicted == pair.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Trains the pair classifier with mini-batch SGD.
///
/// Shuffling and dropout draw from the `210 + epoch` stream, so a rerun with
/// the same seed reproduces parameters bit for bit. A trailing partial batch
/// is trained on rather than dropped — desk-scale corpora often have fewer
/// pairs than one full-scale batch.
pub fn train_movie_sim(
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
    pairs: &[SimilarityPair],
    cfg: &MovieSimConfig,
) -> Result<(MovieSimParams, Vec<EpochLog>), MovieSimError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(MovieSimError::NoPairs);
    }
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MovieSimError::SingleClassPairs { positives, negatives });
    }
    let d_in = {
        let first = &pairs[0].movie_a;
        matrices
            .get(first)
            .ok_or_else(|| MovieSimError::UnknownMovie { movie_id: first.clone() })?
            .dim()
    };
    let resolved = resolve_pairs(matrices, pairs, d_in)?;

    let mut params = MovieSimParams::init(d_in, cfg)?;
    let mut optimizer = Optimizer::sgd(cfg.lr);
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, STREAM_EPOCH_BASE + epoch as u64);
        let mut order: Vec<usize> = (0..resolved.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = MovieSimVars::leaf(&mut tape, &params);
            let mut rows = Vec::with_capacity(batch.len());
            let mut labels: Vec<usize> = Vec::with_capacity(batch.len());
            for &idx in batch {
                let pair = &resolved[idx];
                let dropout =
                    if cfg.dropout > 0.0 { Some((&mut rng, cfg.dropout)) } else { None };
                let logits =
                    pair_logits(&mut tape, &vars, cfg, &pair.a, &pair.b, dropout).map_err(|source| {
                        MovieSimError::Forward {
                            movie_a: pair.movie_a.clone(),
                            movie_b: pair.movie_b.clone(),
                            source,
                        }
                    })?;
                rows.push(logits);
                labels.push(usize::from(pair.label == 1));
            }
            let stacked = tape.stack_rows(&rows);
            let loss = tape.cross_entropy_mean(stacked, &labels);
            loss_sum += tape.value(loss)[[0, 0]] * batch.len() as f64;
            let grads = tape.backward(loss);
            let grad_list = params.grads_in_order(&grads, &vars);
            let mut targets = [
                &mut params.fc1_w,
                &mut params.fc1_b,
                &mut params.fc2_w,
                &mut params.fc2_b,
                &mut params.out_w,
                &mut params.out_b,
            ];
            optimizer.step(&mut targets, &grad_list);
        }

        logs.push(EpochLog {
            epoch,
            loss: loss_sum / resolved.len() as f64,
            acc: eval_accuracy(&params, cfg, &resolved)?,
        });
    }

    Ok((params, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::SimilaritySource;

    fn small_cfg() -> MovieSimConfig {
        MovieSimConfig {
            pad_len: 10,
            hidden_dim: 6,
            k_avg: 4,
            s_avg: 2,
            k_max: 2,
            s_max: 2,
            dropout: 0.0,
            lr: 0.05,
            batch_size: 4,
            epochs: 1,
            seed: 0,
        }
    }

    fn matrix(id: &str, rows: usize, d: usize, f: impl Fn(usize, usize) -> f32) -> ShotEmbeddingMatrix {
        let data = ndarray::Array2::from_shape_fn((rows, d), |(i, j)| f(i, j));
        ShotEmbeddingMatrix::new(MovieId::new(id), data).expect("valid matrix")
    }

    #[test]
    fn full_scale_pooling_chain_dimensions() {
        let cfg = MovieSimConfig::default();
        assert_eq!(pooled_shape((1024, 1024), 16, 8).unwrap(), (127, 127));
        assert_eq!(pooled_shape((127, 127), 16, 8).unwrap(), (14, 14));
        assert_eq!(cfg.pooled_side().unwrap(), 14);
        assert_eq!(cfg.flatten_dim().unwrap(), 196);
    }

    #[test]
    fn small_config_logits_shape_and_purity_agreement() {
        let cfg = small_cfg();
        let params = MovieSimParams::init(3, &cfg).expect("init");
        let a = Mat::from_shape_fn((7, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let b = Mat::from_shape_fn((12, 3), |(i, j)| ((i + 2 * j) as f64).cos());

        let mut tape = Tape::new();
        let vars = MovieSimVars::leaf(&mut tape, &params);
        let logits = pair_logits(&mut tape, &vars, &cfg, &a, &b, None).expect("forward");
        let taped = tape.value(logits).clone();
        assert_eq!(taped.dim(), (1, 2));

        let [l0, l1] = pair_logits_eval(&params, &cfg, &a, &b).expect("eval forward");
        assert!((taped[[0, 0]] - l0).abs() < 1e-12 && (taped[[0, 1]] - l1).abs() < 1e-12);
    }

    #[test]
    fn zero_biases_keep_padding_rows_zero() {
        let cfg = small_cfg();
        let mut params = MovieSimParams::init(3, &cfg).expect("init");
        params.fc1_b.fill(0.0);
        params.fc2_b.fill(0.0);
        let x = Mat::from_shape_fn((4, 3), |(i, j)| 1.0 + (i * 3 + j) as f64);
        let padded = pad_shot_matrix(&x, cfg.pad_len);
        let embedded = embed_shots_eval(&params, &padded);
        for r in 4..cfg.pad_len {
            for c in 0..cfg.hidden_dim {
                assert_eq!(embedded[[r, c]], 0.0, "padding row {r} column {c} should stay zero");
            }
        }
        let real = embed_shots_eval(&params, &x);
        for r in 0..4 {
            for c in 0..cfg.hidden_dim {
                assert!((embedded[[r, c]] - real[[r, c]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn overlong_input_is_truncated() {
        let cfg = small_cfg();
        let x = Mat::from_shape_fn((15, 3), |(i, j)| (i * 3 + j) as f64);
        let padded = pad_shot_matrix(&x, cfg.pad_len);
        assert_eq!(padded.nrows(), cfg.pad_len);
        assert_eq!(padded[[9, 0]], x[[9, 0]]);
    }

    fn separable_setup() -> (BTreeMap<MovieId, ShotEmbeddingMatrix>, Vec<SimilarityPair>) {
        // Two clusters in embedding space; same-cluster pairs are positives.
        let mut matrices = BTreeMap::new();
        let mut pairs = Vec::new();
        let ids: Vec<MovieId> = (0..8).map(|i| MovieId::new(format!("m{i}"))).collect();
        for (i, id) in ids.iter().enumerate() {
            let axis = i % 2;
            let m = matrix(id.as_str(), 8, 3, |r, c| {
                let base = if c == axis { 1.0 } else { 0.0 };
                base + 0.05 * (((r * 3 + c + i) % 7) as f32 - 3.0)
            });
            matrices.insert(id.clone(), m);
        }
        for i in 0..8 {
            for j in (i + 1)..8 {
                pairs.push(SimilarityPair {
                    movie_a: ids[i].clone(),
                    movie_b: ids[j].clone(),
                    label: u8::from(i % 2 == j % 2),
                    source: SimilaritySource::Genre,
                });
            }
        }
        (matrices, pairs)
    }

    #[test]
    fn separable_pairs_reach_high_accuracy() {
        let (matrices, pairs) = separable_setup();
        let cfg = MovieSimConfig { epochs: 40, lr: 0.05, batch_size: 8, ..small_cfg() };
        let (_, logs) = train_movie_sim(&matrices, &pairs, &cfg).expect("train");
        let last = logs.last().expect("logs");
        assert!(last.acc >= 0.95, "expected near-perfect accuracy, got {}", last.acc);
        assert!(last.loss < logs[0].loss, "loss should fall: {} -> {}", logs[0].loss, last.loss);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (matrices, pairs) = separable_setup();
        let cfg = MovieSimConfig { epochs: 2, lr: 0.0, batch_size: 8, ..small_cfg() };
        let (trained, _) = train_movie_sim(&matrices, &pairs, &cfg).expect("train");
        let fresh = MovieSimParams::init(3, &cfg).expect("init");
        assert_eq!(trained, fresh);
    }

    #[test]
    fn training_is_deterministic() {
        let (matrices, pairs) = separable_setup();
        let cfg = MovieSimConfig { epochs: 3, dropout: 0.5, batch_size: 8, ..small_cfg() };
        let (p1, l1) = train_movie_sim(&matrices, &pairs, &cfg).expect("train");
        let (p2, l2) = train_movie_sim(&matrices, &pairs, &cfg).expect("train");
        assert_eq!(p1, p2);
        assert_eq!(l1.len(), l2.len());
        for (a, b) in l1.iter().zip(&l2) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.acc.to_bits(), b.acc.to_bits());
        }
    }

    #[test]
    fn single_class_and_unknown_movie_are_rejected() {
        let (matrices, mut pairs) = separable_setup();
        let cfg = small_cfg();
        let positives: Vec<SimilarityPair> = pairs.iter().filter(|p| p.label == 1).cloned().collect();
        assert!(matches!(
            train_movie_sim(&matrices, &positives, &cfg),
            Err(MovieSimError::SingleClassPairs { negatives: 0, .. })
        ));
        pairs[0].movie_a = MovieId::new("ghost");
        assert!(matches!(
            train_movie_sim(&matrices, &pairs, &cfg),
            Err(MovieSimError::UnknownMovie { movie_id }) if movie_id.as_str() == "ghost"
        ));
    }

    #[test]
    fn mismatched_embedding_width_is_rejected() {
        let (mut matrices, pairs) = separable_setup();
        let wide = matrix("m1", 8, 5, |r, c| (r + c) as f32);
        matrices.insert(MovieId::new("m1"), wide);
        assert!(matches!(
            train_movie_sim(&matrices, &pairs, &small_cfg()),
            Err(MovieSimError::DimMismatch { expected: 3, found: 5, .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_restores_parameters() {
        let cfg = small_cfg();
        let params = MovieSimParams::init(4, &cfg).expect("init");
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("pairclf.ckpt");
        crate::checkpoint::write_checkpoint(&path, &params.tensors()).expect("write");
        let map = TensorMap::load(&path).expect("load");
        let restored = MovieSimParams::from_tensor_map(map, 4, &cfg).expect("rebuild");
        assert_eq!(params, restored);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.dropout = 1.0;
        assert!(matches!(cfg.validate(), Err(MovieSimError::BadConfig { field: "dropout", .. })));
        let mut cfg = small_cfg();
        cfg.pad_len = 3; // smaller than the 4-wide average pooling window
        assert!(matches!(cfg.validate(), Err(MovieSimError::PoolingGeometry { stage: "average", .. })));
    }
}
