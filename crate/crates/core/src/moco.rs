//! Momentum-contrast training of the scene encoder on mined scene pairs.
//!
//! Two copies of the scene encoder learn together: the query encoder is
//! trained by gradient descent, while the key encoder trails it as an
//! exponential moving average and never receives gradients. Every mined pair
//! contributes a (query scene, positive key scene) example; a FIFO queue of
//! past keys supplies the negatives, so each step is a `K+1`-way
//! classification whose correct answer is the fresh positive key.
//!
//! Determinism: queue initialization, shuffling, and parameter init all draw
//! from fixed streams (400 encoder init, 401 queue, `410 + epoch` shuffle)
//! of a single seed, and batches are whole — the trailing
//! `n mod batch_size` pairs of each epoch are skipped, matching a
//! steps-per-epoch of `floor(n / batch_size)`. Pair orientation alternates:
//! even epochs query the A-span, odd epochs the B-span.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, MovieId, ShotEmbeddingMatrix};
use crate::encoder::{encode_scene, encode_scene_value, EncoderConfig, EncoderError, EncoderVars, SceneEncoderParams};
use crate::miner::ScenePair;
use crate::numerics::{Mat, Optimizer, Tape};
use crate::rng::stream_rng;

const STREAM_ENCODER_INIT: u64 = 400;
const STREAM_QUEUE_INIT: u64 = 401;
const STREAM_EPOCH_BASE: u64 = 410;

/// Tolerance for the unit-norm requirement on keys and queue rows.
const UNIT_NORM_TOL: f64 = 1e-9;

/// Hyperparameters of contrastive training.
///
/// Defaults are the published full-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoCoConfig {
    /// Number of queued negative keys (K); must be divisible by
    /// `batch_size`.
    pub queue_size: usize,
    /// Key-encoder momentum, in `[0, 1]`.
    pub momentum: f64,
    /// Softmax temperature, strictly positive.
    pub temperature: f64,
    /// Peak Adam learning rate.
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Epochs over which the learning rate ramps up linearly.
    pub warmup_epochs: usize,
    /// Pairs per step; trailing partial batches are skipped.
    pub batch_size: usize,
    /// Passes over the pair list.
    pub epochs: usize,
    /// Master seed for init, queue, and shuffling.
    pub seed: u64,
}

impl Default for MoCoConfig {
    fn default() -> Self {
        Self {
            queue_size: 65536,
            momentum: 0.999,
            temperature: 0.07,
            lr: 5e-6,
            weight_decay: 1e-8,
            warmup_epochs: 5,
            batch_size: 128,
            epochs: 20,
            seed: 0,
        }
    }
}

impl MoCoConfig {
    pub fn validate(&self) -> Result<(), MoCoError> {
        if self.batch_size == 0 {
            return Err(MoCoError::BadConfig { field: "batch_size", reason: "must be at least 1".into() });
        }
        if self.queue_size == 0 || self.queue_size % self.batch_size != 0 {
            return Err(MoCoError::BadConfig {
                field: "queue_size",
                reason: format!("{} is not a positive multiple of batch_size {}", self.queue_size, self.batch_size),
            });
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(MoCoError::BadConfig {
                field: "momentum",
                reason: format!("{} is outside [0, 1]", self.momentum),
            });
        }
        if !(self.temperature > 0.0) {
            return Err(MoCoError::BadConfig {
                field: "temperature",
                reason: format!("{} is not strictly positive", self.temperature),
            });
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(MoCoError::BadConfig { field: "lr", reason: format!("{} is not a valid rate", self.lr) });
        }
        Ok(())
    }
}

/// Failure in contrastive training.
#[derive(Debug, thiserror::Error)]
pub enum MoCoError {
    #[error("config field {field} is invalid: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error("{have} scene pairs cannot fill one batch of {need}")]
    InsufficientPairs { have: usize, need: usize },
    #[error("scene pair references movie {movie_id} which has no embedding matrix")]
    UnknownMovie { movie_id: MovieId },
    #[error("scene tokens could not be extracted: {source}")]
    Scene {
        #[from]
        source: CorpusError,
    },
    #[error("scene encoding failed: {source}")]
    Encoder {
        #[from]
        source: EncoderError,
    },
    #[error("key row {row} has norm {norm:.6e}, not unit within {tol:.0e}", tol = UNIT_NORM_TOL)]
    NonNormalizedKey { row: usize, norm: f64 },
    #[error("cannot enqueue {batch} keys of width {key_dim} into a {queue_size}x{queue_dim} queue")]
    QueueGeometry { batch: usize, key_dim: usize, queue_size: usize, queue_dim: usize },
}

/// Mutable training state: both encoders, the negative queue, and counters.
#[derive(Debug, Clone)]
pub struct MoCoState {
    /// Gradient-trained encoder; this is the model that ships.
    pub query_params: SceneEncoderParams,
    /// Momentum copy producing keys; never sees gradients.
    pub key_params: SceneEncoderParams,
    /// `K x out_dim` matrix of past keys, every row unit-norm.
    pub queue: Mat,
    /// Next queue slot to overwrite.
    pub ptr: usize,
    /// Optimizer steps taken.
    pub step: usize,
}

/// InfoNCE loss for one query: `K+1`-way softmax cross entropy where index 0
/// is the positive key and the queue rows are negatives.
///
/// Returns the loss and the unscaled-by-nothing logits
/// `[q.k0, q.queue_1, ..., q.queue_K] / temperature`.
pub fn infonce_loss(q: &Mat, k0: &Mat, queue: &Mat, temperature: f64) -> Result<(f64, Vec<f64>), MoCoError> {
    if !(temperature > 0.0) {
        return Err(MoCoError::BadConfig {
            field: "temperature",
            reason: format!("{temperature} is not strictly positive"),
        });
    }
    let mut logits = Vec::with_capacity(queue.nrows() + 1);
    logits.push(q.row(0).dot(&k0.row(0)) / temperature);
    for row in queue.rows() {
        logits.push(q.row(0).dot(&row) / temperature);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    Ok((log_sum - logits[0], logits))
}

/// Moves `key` toward `query`: every tensor becomes
/// `momentum * key + (1 - momentum) * query`. `query` is untouched.
pub fn momentum_update(key: &mut SceneEncoderParams, query: &SceneEncoderParams, momentum: f64) {
    let query_tensors = query.tensors();
    for (k, (_, q)) in key.tensors_mut().into_iter().zip(query_tensors) {
        debug_assert_eq!(k.dim(), q.dim());
        k.zip_mut_with(q, |kv, &qv| *kv = momentum * *kv + (1.0 - momentum) * qv);
    }
}

/// Overwrites queue rows `[ptr, ptr + batch)` with `keys` and advances the
/// pointer. The divisibility invariant keeps writes wrap-free; all other
/// rows are untouched.
pub fn enqueue(queue: &mut Mat, ptr: &mut usize, keys: &Mat) -> Result<(), MoCoError> {
    let (k_total, queue_dim) = queue.dim();
    let (batch, key_dim) = keys.dim();
    if batch > k_total || key_dim != queue_dim || *ptr + batch > k_total {
        return Err(MoCoError::QueueGeometry { batch, key_dim, queue_size: k_total, queue_dim });
    }
    for (row, key) in keys.rows().into_iter().enumerate() {
        let norm = key.dot(&key).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(MoCoError::NonNormalizedKey { row, norm });
        }
    }
    queue.slice_mut(ndarray::s![*ptr..*ptr + batch, ..]).assign(keys);
    *ptr = (*ptr + batch) % k_total;
    Ok(())
}

/// Fills a fresh queue with unit-normalized Gaussian rows from stream 401.
pub fn init_queue(queue_size: usize, out_dim: usize, seed: u64) -> Mat {
    let mut rng = stream_rng(seed, STREAM_QUEUE_INIT);
    let mut queue = Mat::zeros((queue_size, out_dim));
    for mut row in queue.rows_mut() {
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    queue
}

/// Whether epoch `epoch` encodes the A-span with the query encoder.
pub fn queries_span_a(epoch: usize) -> bool {
    epoch % 2 == 0
}

/// One epoch's contrastive training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    /// Zero-based epoch index.
    pub epoch: usize,
    /// Mean per-pair loss across the epoch's whole batches.
    pub loss: f64,
    /// Share of queries ranking their positive key first.
    pub top1: f64,
    /// Share of queries ranking their positive key in the best five.
    pub top5: f64,
}

struct ResolvedScenes {
    a: Vec<Mat>,
    b: Vec<Mat>,
}

fn resolve_scenes(
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
    pairs: &[ScenePair],
) -> Result<ResolvedScenes, MoCoError> {
    let mut a = Vec::with_capacity(pairs.len());
    let mut b = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let fetch = |movie_id: &MovieId| {
            matrices.get(movie_id).ok_or_else(|| MoCoError::UnknownMovie { movie_id: movie_id.clone() })
        };
        a.push(fetch(&pair.movie_a)?.span_to_f64(pair.span_a)?);
        b.push(fetch(&pair.movie_b)?.span_to_f64(pair.span_b)?);
    }
    Ok(ResolvedScenes { a, b })
}

/// Trains the scene encoder contrastively on mined pairs.
///
/// Per batch: queries pass through the query encoder on the tape, positive
/// keys through the key encoder without gradients, the queue supplies
/// negatives; one warmed-up Adam step updates the query encoder, the key
/// encoder takes a momentum step, and the fresh keys replace the oldest
/// queue rows. Returns the trained query encoder and per-epoch logs.
pub fn train_contrastive(
    matrices: &BTreeMap<MovieId, ShotEmbeddingMatrix>,
    pairs: &[ScenePair],
    enc_cfg: &EncoderConfig,
    cfg: &MoCoConfig,
) -> Result<(SceneEncoderParams, Vec<EpochLog>), MoCoError> {
    enc_cfg.validate()?;
    cfg.validate()?;
    if pairs.len() < cfg.batch_size {
        return Err(MoCoError::InsufficientPairs { have: pairs.len(), need: cfg.batch_size });
    }
    let scenes = resolve_scenes(matrices, pairs)?;
    let d_in = scenes.a[0].ncols();

    let mut init_rng = stream_rng(cfg.seed, STREAM_ENCODER_INIT);
    let query_params = SceneEncoderParams::init(d_in, enc_cfg, &mut init_rng)?;
    let key_params = query_params.clone();
    let mut state = MoCoState {
        query_params,
        key_params,
        queue: init_queue(cfg.queue_size, enc_cfg.out_dim, cfg.seed),
        ptr: 0,
        step: 0,
    };

    let steps_per_epoch = pairs.len() / cfg.batch_size;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let mut optimizer = Optimizer::adam(cfg.lr, cfg.weight_decay, warmup_steps);
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, STREAM_EPOCH_BASE + epoch as u64);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let query_side_a = queries_span_a(epoch);

        let mut loss_sum = 0.0;
        let mut top1 = 0usize;
        let mut top5 = 0usize;
        let mut counted = 0usize;

        for batch in order.chunks_exact(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = EncoderVars::leaf(&mut tape, &state.query_params);

            // Keys first (no gradient), then queries on the shared tape.
            let mut key_rows = Mat::zeros((cfg.batch_size, enc_cfg.out_dim));
            for (slot, &idx) in batch.iter().enumerate() {
                let key_tokens = if query_side_a { &scenes.b[idx] } else { &scenes.a[idx] };
                let key = encode_scene_value(&state.key_params, enc_cfg, key_tokens)?;
                key_rows.row_mut(slot).assign(&key.row(0));
            }

            let queue_t = tape.constant(state.queue.t().to_owned());
            let mut logit_rows = Vec::with_capacity(cfg.batch_size);
            for (slot, &idx) in batch.iter().enumerate() {
                let query_tokens = if query_side_a { &scenes.a[idx] } else { &scenes.b[idx] };
                let q = encode_scene(&mut tape, &vars, enc_cfg, query_tokens)?;
                let k0 = tape.constant(key_rows.row(slot).insert_axis(ndarray::Axis(1)).to_owned());
                let pos = tape.matmul(q, k0);
                let negs = tape.matmul(q, queue_t);
                let row = tape.concat_cols(pos, negs);
                logit_rows.push(tape.scale(row, 1.0 / cfg.temperature));
            }
            let stacked = tape.stack_rows(&logit_rows);
            let targets = vec![0usize; cfg.batch_size];
            let loss = tape.cross_entropy_mean(stacked, &targets);
            loss_sum += tape.value(loss)[[0, 0]] * cfg.batch_size as f64;

            // Rank of the positive among the negatives, from the same logits
            // the loss saw.
            let logit_values = tape.value(stacked).clone();
            for row in logit_values.rows() {
                let positive = row[0];
                let rank = row.iter().skip(1).filter(|&&l| l > positive).count();
                top1 += usize::from(rank == 0);
                top5 += usize::from(rank < 5);
            }
            counted += cfg.batch_size;

            let grads = tape.backward(loss);
            let grad_list = vars.grads_in_order(&grads);
            let mut targets_mut = state.query_params.tensors_mut();
            optimizer.step(&mut targets_mut, &grad_list);
            state.step += 1;

            momentum_update(&mut state.key_params, &state.query_params, cfg.momentum);
            enqueue(&mut state.queue, &mut state.ptr, &key_rows)?;
        }

        logs.push(EpochLog {
            epoch,
            loss: loss_sum / counted as f64,
            top1: top1 as f64 / counted as f64,
            top5: top5 as f64 / counted as f64,
        });
    }

    Ok((state.query_params, logs))
}
