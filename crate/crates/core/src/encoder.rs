//! Variable-length multi-shot scene encoder.
//!
//! A scene is a run of consecutive shots, each already embedded as a fixed
//! vector. The encoder projects every shot to the model width, prepends a
//! learnable class token, adds position embeddings resampled to the scene's
//! length, runs pre-norm self-attention blocks, and maps the class-token
//! output through a linear head onto the unit sphere. Scenes of any length —
//! one shot or dozens — share one parameter set because the position table
//! is linearly interpolated to each input's length, with the class-token row
//! copied unchanged.
//!
//! Everything is built on the gradient tape, so the contrastive trainer can
//! differentiate straight through attention, interpolation, and the final
//! normalization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointError, TensorMap};
use crate::numerics::{Gradients, Mat, NumericsError, Tape, Var};

/// Architecture of the scene encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Width of token representations inside the blocks.
    pub d_model: usize,
    /// Attention heads per block; must divide `d_model`.
    pub n_heads: usize,
    /// Number of attention + feed-forward blocks.
    pub n_layers: usize,
    /// Length the position table is stored at; other lengths interpolate.
    pub n_base_positions: usize,
    /// Output embedding width.
    pub out_dim: usize,
    /// Feed-forward hidden width as a multiple of `d_model`.
    pub mlp_ratio: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4, n_layers: 2, n_base_positions: 9, out_dim: 128, mlp_ratio: 4.0 }
    }
}

impl EncoderConfig {
    /// Feed-forward hidden width in columns.
    pub fn ff_dim(&self) -> usize {
        (self.mlp_ratio * self.d_model as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(EncoderError::BadConfig {
                field: "n_heads",
                reason: format!("{} heads do not evenly divide width {}", self.n_heads, self.d_model),
            });
        }
        if self.n_layers == 0 {
            return Err(EncoderError::BadConfig { field: "n_layers", reason: "must be at least 1".into() });
        }
        if self.n_base_positions == 0 {
            return Err(EncoderError::BadConfig { field: "n_base_positions", reason: "must be at least 1".into() });
        }
        if self.out_dim == 0 {
            return Err(EncoderError::BadConfig { field: "out_dim", reason: "must be at least 1".into() });
        }
        if self.ff_dim() == 0 {
            return Err(EncoderError::BadConfig {
                field: "mlp_ratio",
                reason: format!("{} yields an empty feed-forward layer", self.mlp_ratio),
            });
        }
        Ok(())
    }
}

/// Failure while building or running the scene encoder.
#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("config field {field} is invalid: {reason}")]
    BadConfig { field: &'static str, reason: String },
    #[error("cannot resample positions to length {target_len}; need at least 1")]
    BadTargetLength { target_len: usize },
    #[error("scene has no shots; the encoder needs at least one token")]
    EmptyScene,
    #[error("scene token width {found} does not match encoder input width {expected}")]
    TokenWidth { expected: usize, found: usize },
    #[error("head output could not be normalized: {source}")]
    DegenerateOutput { source: NumericsError },
    #[error("checkpoint does not match this encoder: {source}")]
    Checkpoint {
        #[from]
        source: CheckpointError,
    },
}

/// Parameters of one attention + feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Mat,
    pub ln1_bias: Mat,
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub ln2_gain: Mat,
    pub ln2_bias: Mat,
    pub ff1_w: Mat,
    pub ff1_b: Mat,
    pub ff2_w: Mat,
    pub ff2_b: Mat,
}

/// All learnable tensors of the scene encoder.
///
/// `pos_table` has `n_base_positions + 1` rows; row 0 belongs to the class
/// token and is never resampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoderParams {
    pub token_proj_w: Mat,
    pub token_proj_b: Mat,
    pub class_token: Mat,
    pub pos_table: Mat,
    pub blocks: Vec<BlockParams>,
    pub head_w: Mat,
    pub head_b: Mat,
}

fn uniform_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Mat::from_shape_vec((rows, cols), data).expect("length matches rows*cols")
}

impl SceneEncoderParams {
    /// Draws fresh parameters from `rng`: linear layers uniform in
    /// `±1/sqrt(fan_in)`, norms at identity, class token and positions small.
    pub fn init(d_in: usize, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ff = cfg.ff_dim();
        let b_in = 1.0 / (d_in as f64).sqrt();
        let b_d = 1.0 / (d as f64).sqrt();
        let b_ff = 1.0 / (ff as f64).sqrt();
        let blocks = (0..cfg.n_layers)
            .map(|_| BlockParams {
                ln1_gain: Mat::ones((1, d)),
                ln1_bias: Mat::zeros((1, d)),
                wq: uniform_mat(rng, d, d, b_d),
                bq: uniform_mat(rng, 1, d, b_d),
                wk: uniform_mat(rng, d, d, b_d),
                bk: uniform_mat(rng, 1, d, b_d),
                wv: uniform_mat(rng, d, d, b_d),
                bv: uniform_mat(rng, 1, d, b_d),
                wo: uniform_mat(rng, d, d, b_d),
                bo: uniform_mat(rng, 1, d, b_d),
                ln2_gain: Mat::ones((1, d)),
                ln2_bias: Mat::zeros((1, d)),
                ff1_w: uniform_mat(rng, d, ff, b_d),
                ff1_b: uniform_mat(rng, 1, ff, b_d),
                ff2_w: uniform_mat(rng, ff, d, b_ff),
                ff2_b: uniform_mat(rng, 1, d, b_ff),
            })
            .collect();
        Ok(Self {
            token_proj_w: uniform_mat(rng, d_in, d, b_in),
            token_proj_b: uniform_mat(rng, 1, d, b_in),
            class_token: uniform_mat(rng, 1, d, b_d),
            pos_table: uniform_mat(rng, cfg.n_base_positions + 1, d, b_d),
            blocks,
            head_w: uniform_mat(rng, d, cfg.out_dim, b_d),
            head_b: uniform_mat(rng, 1, cfg.out_dim, b_d),
        })
    }

    /// Shot-embedding width this encoder accepts.
    pub fn d_in(&self) -> usize {
        self.token_proj_w.nrows()
    }

    /// Checkpoint entries in fixed order; block tensors are prefixed
    /// `block{i}.`.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![
            ("token_proj_w".into(), &self.token_proj_w),
            ("token_proj_b".into(), &self.token_proj_b),
            ("class_token".into(), &self.class_token),
            ("pos_table".into(), &self.pos_table),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (suffix, mat) in [
                ("ln1_gain", &b.ln1_gain),
                ("ln1_bias", &b.ln1_bias),
                ("wq", &b.wq),
                ("bq", &b.bq),
                ("wk", &b.wk),
                ("bk", &b.bk),
                ("wv", &b.wv),
                ("bv", &b.bv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("ln2_gain", &b.ln2_gain),
                ("ln2_bias", &b.ln2_bias),
                ("ff1_w", &b.ff1_w),
                ("ff1_b", &b.ff1_b),
                ("ff2_w", &b.ff2_w),
                ("ff2_b", &b.ff2_b),
            ] {
                out.push((format!("block{i}.{suffix}"), mat));
            }
        }
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    /// Mutable views over every tensor, in [`tensors`](Self::tensors) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = vec![
            &mut self.token_proj_w,
            &mut self.token_proj_b,
            &mut self.class_token,
            &mut self.pos_table,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_gain,
                &mut b.ln1_bias,
                &mut b.wq,
                &mut b.bq,
                &mut b.wk,
                &mut b.bk,
                &mut b.wv,
                &mut b.bv,
                &mut b.wo,
                &mut b.bo,
                &mut b.ln2_gain,
                &mut b.ln2_bias,
                &mut b.ff1_w,
                &mut b.ff1_b,
                &mut b.ff2_w,
                &mut b.ff2_b,
            ]);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Rebuilds parameters from a checkpoint, shape-checked against `d_in`
    /// and `cfg`.
    pub fn from_tensor_map(mut map: TensorMap, d_in: usize, cfg: &EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let ff = cfg.ff_dim();
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        let token_proj_w = map.take("token_proj_w", d_in, d)?;
        let token_proj_b = map.take("token_proj_b", 1, d)?;
        let class_token = map.take("class_token", 1, d)?;
        let pos_table = map.take("pos_table", cfg.n_base_positions + 1, d)?;
        for i in 0..cfg.n_layers {
            let t = |suffix: &str| format!("block{i}.{suffix}");
            blocks.push(BlockParams {
                ln1_gain: map.take(&t("ln1_gain"), 1, d)?,
                ln1_bias: map.take(&t("ln1_bias"), 1, d)?,
                wq: map.take(&t("wq"), d, d)?,
                bq: map.take(&t("bq"), 1, d)?,
                wk: map.take(&t("wk"), d, d)?,
                bk: map.take(&t("bk"), 1, d)?,
                wv: map.take(&t("wv"), d, d)?,
                bv: map.take(&t("bv"), 1, d)?,
                wo: map.take(&t("wo"), d, d)?,
                bo: map.take(&t("bo"), 1, d)?,
                ln2_gain: map.take(&t("ln2_gain"), 1, d)?,
                ln2_bias: map.take(&t("ln2_bias"), 1, d)?,
                ff1_w: map.take(&t("ff1_w"), d, ff)?,
                ff1_b: map.take(&t("ff1_b"), 1, ff)?,
                ff2_w: map.take(&t("ff2_w"), ff, d)?,
                ff2_b: map.take(&t("ff2_b"), 1, d)?,
            });
        }
        let head_w = map.take("head_w", d, cfg.out_dim)?;
        let head_b = map.take("head_b", 1, cfg.out_dim)?;
        map.finish()?;
        Ok(Self { token_proj_w, token_proj_b, class_token, pos_table, blocks, head_w, head_b })
    }
}

/// Tape handles for one step's encoder parameters, mirroring
/// [`SceneEncoderParams`].
pub struct EncoderVars {
    pub token_proj_w: Var,
    pub token_proj_b: Var,
    pub class_token: Var,
    pub pos_table: Var,
    pub blocks: Vec<BlockVars>,
    pub head_w: Var,
    pub head_b: Var,
}

pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
}

impl EncoderVars {
    /// Registers every parameter as a tape leaf.
    pub fn leaf(tape: &mut Tape, params: &SceneEncoderParams) -> Self {
        Self {
            token_proj_w: tape.leaf(params.token_proj_w.clone()),
            token_proj_b: tape.leaf(params.token_proj_b.clone()),
            class_token: tape.leaf(params.class_token.clone()),
            pos_table: tape.leaf(params.pos_table.clone()),
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockVars {
                    ln1_gain: tape.leaf(b.ln1_gain.clone()),
                    ln1_bias: tape.leaf(b.ln1_bias.clone()),
                    wq: tape.leaf(b.wq.clone()),
                    bq: tape.leaf(b.bq.clone()),
                    wk: tape.leaf(b.wk.clone()),
                    bk: tape.leaf(b.bk.clone()),
                    wv: tape.leaf(b.wv.clone()),
                    bv: tape.leaf(b.bv.clone()),
                    wo: tape.leaf(b.wo.clone()),
                    bo: tape.leaf(b.bo.clone()),
                    ln2_gain: tape.leaf(b.ln2_gain.clone()),
                    ln2_bias: tape.leaf(b.ln2_bias.clone()),
                    ff1_w: tape.leaf(b.ff1_w.clone()),
                    ff1_b: tape.leaf(b.ff1_b.clone()),
                    ff2_w: tape.leaf(b.ff2_w.clone()),
                    ff2_b: tape.leaf(b.ff2_b.clone()),
                })
                .collect(),
            head_w: tape.leaf(params.head_w.clone()),
            head_b: tape.leaf(params.head_b.clone()),
        }
    }

    /// Variable handles in [`SceneEncoderParams::tensors`] order.
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.token_proj_w, self.token_proj_b, self.class_token, self.pos_table];
        for b in &self.blocks {
            out.extend([
                b.ln1_gain, b.ln1_bias, b.wq, b.bq, b.wk, b.bk, b.wv, b.bv, b.wo, b.bo, b.ln2_gain,
                b.ln2_bias, b.ff1_w, b.ff1_b, b.ff2_w, b.ff2_b,
            ]);
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }

    /// Gradients for every parameter, in the same order as
    /// [`ordered`](Self::ordered).
    pub fn grads_in_order(&self, grads: &Gradients) -> Vec<Mat> {
        self.ordered().into_iter().map(|v| grads.wrt(v)).collect()
    }
}

/// Mixing weights that resample `n_base` position rows to `target_len` rows
/// by 1-D linear interpolation, as a `(target_len + 1) x (n_base + 1)`
/// constant matrix acting on the full position table (class row included).
///
/// Row 0 copies the class-token position; output row `j + 1` reads source
/// coordinate `c = j * (n_base - 1) / (target_len - 1)` (zero when
/// `target_len` is 1) and mixes the two bracketing source rows.
pub fn interpolation_weights(n_base: usize, target_len: usize) -> Result<Mat, EncoderError> {
    if target_len < 1 {
        return Err(EncoderError::BadTargetLength { target_len });
    }
    let mut w = Mat::zeros((target_len + 1, n_base + 1));
    w[[0, 0]] = 1.0;
    for j in 0..target_len {
        let c = if target_len == 1 {
            0.0
        } else {
            j as f64 * (n_base as f64 - 1.0) / (target_len as f64 - 1.0)
        };
        let lo = c.floor() as usize;
        let hi = c.ceil() as usize;
        let frac = c - lo as f64;
        w[[j + 1, 1 + lo]] += 1.0 - frac;
        if hi != lo {
            w[[j + 1, 1 + hi]] += frac;
        }
    }
    Ok(w)
}

/// Resamples a concrete position table to `target_len` token rows.
pub fn interpolate_positions(pos_table: &Mat, target_len: usize) -> Result<Mat, EncoderError> {
    let w = interpolation_weights(pos_table.nrows() - 1, target_len)?;
    Ok(w.dot(pos_table))
}

fn attention(tape: &mut Tape, cfg: &EncoderConfig, block: &BlockVars, x: Var) -> Var {
    let head_dim = cfg.d_model / cfg.n_heads;
    let q = tape.affine(x, block.wq, block.bq);
    let k = tape.affine(x, block.wk, block.bk);
    let v = tape.affine(x, block.wv, block.bv);
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim);
        let kh = tape.slice_cols(k, h * head_dim, head_dim);
        let vh = tape.slice_cols(v, h * head_dim, head_dim);
        let kht = tape.transpose(kh);
        let scores = tape.matmul(qh, kht);
        let scaled = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
        let probs = tape.softmax_rows(scaled);
        heads.push(tape.matmul(probs, vh));
    }
    let mut ctx = heads[0];
    for &h in &heads[1..] {
        ctx = tape.concat_cols(ctx, h);
    }
    tape.affine(ctx, block.wo, block.bo)
}

const LAYER_NORM_EPS: f64 = 1e-6;

fn block_forward(tape: &mut Tape, cfg: &EncoderConfig, block: &BlockVars, x: Var) -> Var {
    let normed = tape.layer_norm_rows(x, block.ln1_gain, block.ln1_bias, LAYER_NORM_EPS);
    let attended = attention(tape, cfg, block, normed);
    let x = tape.add(x, attended);
    let normed = tape.layer_norm_rows(x, block.ln2_gain, block.ln2_bias, LAYER_NORM_EPS);
    let h = tape.affine(normed, block.ff1_w, block.ff1_b);
    let h = tape.gelu(h);
    let h = tape.affine(h, block.ff2_w, block.ff2_b);
    tape.add(x, h)
}

/// Encodes one scene on the tape: returns a `1 x out_dim` unit row.
///
/// `tokens` is the scene's `n x d_in` shot-embedding matrix, `n >= 1`. The
/// whole path — projection, position interpolation, attention blocks, head,
/// normalization — is differentiable with respect to every parameter.
pub fn encode_scene(
    tape: &mut Tape,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    tokens: &Mat,
) -> Result<Var, EncoderError> {
    cfg.validate()?;
    if tokens.nrows() == 0 {
        return Err(EncoderError::EmptyScene);
    }
    let d_in = tape.value(vars.token_proj_w).nrows();
    if tokens.ncols() != d_in {
        return Err(EncoderError::TokenWidth { expected: d_in, found: tokens.ncols() });
    }
    let n = tokens.nrows();
    let x = tape.constant(tokens.clone());
    let projected = tape.affine(x, vars.token_proj_w, vars.token_proj_b);
    let with_class = tape.stack_rows(&[vars.class_token, projected]);

    let mix = interpolation_weights(cfg.n_base_positions, n)?;
    let mix = tape.constant(mix);
    let positions = tape.matmul(mix, vars.pos_table);
    let mut h = tape.add(with_class, positions);

    for block in &vars.blocks {
        h = block_forward(tape, cfg, block, h);
    }
    let class_out = tape.row(h, 0);
    let out = tape.affine(class_out, vars.head_w, vars.head_b);
    tape.l2_normalize_rows(out).map_err(|source| EncoderError::DegenerateOutput { source })
}

/// Evaluation-mode encoding: the same path, returning the value only.
pub fn encode_scene_value(
    params: &SceneEncoderParams,
    cfg: &EncoderConfig,
    tokens: &Mat,
) -> Result<Mat, EncoderError> {
    let mut tape = Tape::new();
    let vars = EncoderVars::leaf(&mut tape, params);
    let out = encode_scene(&mut tape, &vars, cfg, tokens)?;
    Ok(tape.value(out).clone())
}
