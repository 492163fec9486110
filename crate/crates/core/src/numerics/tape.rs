//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] records a DAG of matrix operations as they execute. Each node
//! stores its forward value, the indices of its parents, and a closure that
//! maps the node's output gradient to gradient contributions for each parent.
//! [`Tape::backward`] seeds the (scalar) root with 1 and sweeps the nodes in
//! reverse creation order, which is a valid topological order because a node
//! can only depend on earlier nodes.
//!
//! Tapes are cheap, single-use objects: build a graph, call `backward`, read
//! the gradients, drop the tape. Nothing is shared between steps except the
//! parameter matrices the caller re-inserts as leaves.

use ndarray::{s, Array1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{avg_pool, max_pool_with_argmax, Mat, NumericsError};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// `(out_grad, out_value, parent_values) -> per-parent gradient contributions`.
type BackwardFn = Box<dyn Fn(&Mat, &Mat, &[&Mat]) -> Vec<Mat>>;

struct Node {
    value: Mat,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
///
/// Only inputs (nodes created with [`Tape::leaf`] or [`Tape::constant`])
/// retain their gradients; intermediate gradients are consumed during the
/// sweep.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    dims: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, zero-filled if no path
    /// connected `v` to the root.
    pub fn wrt(&self, v: Var) -> Mat {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Mat::zeros(self.dims[v.0]),
        }
    }
}

/// Records matrix operations and differentiates scalar outputs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn assert_same_shape(a: &Mat, b: &Mat, op: &str) {
    assert_eq!(a.dim(), b.dim(), "{op}: operand shapes {:?} vs {:?} differ", a.dim(), b.dim());
}

fn row_matrix(v: Array1<f64>) -> Mat {
    v.insert_axis(Axis(0))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node { value, parents, backward });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a tracked input; its gradient is retained by `backward`.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, vec![], None)
    }

    /// Inserts an untracked input. Structurally identical to [`Tape::leaf`];
    /// the name documents that the caller will not read its gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, vec![], None)
    }

    /// Forward value of `v`.
    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_same_shape(self.value(a), self.value(b), "add");
        let value = self.value(a) + self.value(b);
        self.push(value, vec![a.0, b.0], Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_same_shape(self.value(a), self.value(b), "sub");
        let value = self.value(a) - self.value(b);
        self.push(value, vec![a.0, b.0], Some(Box::new(|g, _, _| vec![g.clone(), -g])))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_same_shape(self.value(a), self.value(b), "mul");
        let value = self.value(a) * self.value(b);
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, pv| vec![g * pv[1], g * pv[0]])),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, vec![a.0], Some(Box::new(move |g, _, _| vec![g * c])))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul: inner dimensions {ar}x{ac} . {br}x{bc} differ");
        let value = self.value(a).dot(self.value(b));
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, pv| vec![g.dot(&pv[1].t()), pv[0].t().dot(g)])),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, vec![a.0], Some(Box::new(|g, _, _| vec![g.t().to_owned()])))
    }

    /// Adds a `1 x c` bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (_, c) = self.value(a).dim();
        let bdim = self.value(bias).dim();
        assert_eq!(bdim, (1, c), "add_row: bias shape {bdim:?} does not broadcast over columns {c}");
        let value = self.value(a) + self.value(bias);
        self.push(
            value,
            vec![a.0, bias.0],
            Some(Box::new(|g, _, _| vec![g.clone(), row_matrix(g.sum_axis(Axis(0)))])),
        )
    }

    /// `x.w + bias` — the ubiquitous affine layer.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, bias)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(
            value,
            vec![a.0],
            // Subgradient at the kink: exactly-zero inputs get zero gradient.
            Some(Box::new(|g, _, pv| {
                vec![ndarray::Zip::from(g).and(pv[0]).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 })]
            })),
        )
    }

    /// GELU in its tanh parameterization:
    /// `0.5·x·(1 + tanh(sqrt(2/π)·(x + 0.044715·x³)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let value = self.value(a).mapv(|x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, pv| {
                vec![ndarray::Zip::from(g).and(pv[0]).map_collect(|&g, &x| {
                    let t = (C * (x + A * x * x * x)).tanh();
                    let du = C * (1.0 + 3.0 * A * x * x);
                    g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                })]
            })),
        )
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the
    /// survivors by `1/(1-p)`, so eval-time forwards need no rescaling.
    /// `p = 0` is the identity. The mask is drawn from `rng` in row-major
    /// order, one draw per entry.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0, 1)");
        if p == 0.0 {
            return a;
        }
        let keep_scale = 1.0 / (1.0 - p);
        let dim = self.value(a).dim();
        let mask = Mat::from_shape_fn(dim, |_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Row-wise softmax, computed stably (max-shifted exponentials).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, y, _| {
                let mut gx = g * y;
                for (mut gx_row, y_row) in gx.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = gx_row.sum();
                    ndarray::Zip::from(&mut gx_row).and(y_row).for_each(|gx, &y| *gx -= dot * y);
                }
                vec![gx]
            })),
        )
    }

    /// Per-row layer normalization with learnable `1 x d` gain and bias:
    /// `y = (x - mean) / sqrt(var + eps) * gain + bias`, variance taken over
    /// the row (population form, divisor `d`).
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (_, d) = self.value(x).dim();
        assert_eq!(self.value(gain).dim(), (1, d), "layer_norm_rows: gain shape");
        assert_eq!(self.value(bias).dim(), (1, d), "layer_norm_rows: bias shape");
        let value = {
            let xv = self.value(x);
            let mut out = xv.clone();
            for mut row in out.rows_mut() {
                let mean = row.sum() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + eps).sqrt();
                row.mapv_inplace(|v| (v - mean) * inv);
            }
            out * self.value(gain) + self.value(bias)
        };
        self.push(
            value,
            vec![x.0, gain.0, bias.0],
            Some(Box::new(move |g, _, pv| {
                let xv = pv[0];
                let gamma = pv[1];
                let dim = xv.dim();
                let df = dim.1 as f64;
                let mut gx = Mat::zeros(dim);
                let mut ggain = Mat::zeros((1, dim.1));
                let mut gbias = Mat::zeros((1, dim.1));
                for r in 0..dim.0 {
                    let xrow = xv.row(r);
                    let grow = g.row(r);
                    let mean = xrow.sum() / df;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = xrow.iter().map(|v| (v - mean) * inv).collect();
                    let ghat: Vec<f64> =
                        grow.iter().zip(gamma.row(0)).map(|(&g, &gm)| g * gm).collect();
                    let mean_ghat: f64 = ghat.iter().sum::<f64>() / df;
                    let mean_ghat_xhat: f64 =
                        ghat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / df;
                    for c in 0..dim.1 {
                        gx[(r, c)] = inv * (ghat[c] - mean_ghat - xhat[c] * mean_ghat_xhat);
                        ggain[(0, c)] += grow[c] * xhat[c];
                        gbias[(0, c)] += grow[c];
                    }
                }
                vec![gx, ggain, gbias]
            })),
        )
    }

    /// Square-window average pooling; see [`pooled_shape`] for the geometry.
    pub fn avg_pool2d(&mut self, a: Var, k: usize, s: usize) -> Result<Var, NumericsError> {
        let value = avg_pool(self.value(a), k, s)?;
        Ok(self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, pv| {
                let mut gx = Mat::zeros(pv[0].dim());
                let denom = (k * k) as f64;
                let (out_r, out_c) = g.dim();
                for i in 0..out_r {
                    for j in 0..out_c {
                        let share = g[(i, j)] / denom;
                        for di in 0..k {
                            for dj in 0..k {
                                gx[(i * s + di, j * s + dj)] += share;
                            }
                        }
                    }
                }
                vec![gx]
            })),
        ))
    }

    /// Square-window max pooling. Gradient routes to the first maximal
    /// element (row-major scan) of each window.
    pub fn max_pool2d(&mut self, a: Var, k: usize, s: usize) -> Result<Var, NumericsError> {
        let (value, argmax) = max_pool_with_argmax(self.value(a), k, s)?;
        let out_c = value.dim().1;
        Ok(self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, pv| {
                let mut gx = Mat::zeros(pv[0].dim());
                for (cell, &at) in argmax.iter().enumerate() {
                    gx[at] += g[(cell / out_c, cell % out_c)];
                }
                vec![gx]
            })),
        ))
    }

    /// Stacks same-width blocks vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows: no inputs");
        let cols = self.value(parts[0]).dim().1;
        let mut row_counts = Vec::with_capacity(parts.len());
        let mut rows = 0;
        for &p in parts {
            let d = self.value(p).dim();
            assert_eq!(d.1, cols, "stack_rows: column counts differ");
            row_counts.push(d.0);
            rows += d.0;
        }
        let mut value = Mat::zeros((rows, cols));
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            value.slice_mut(s![off..off + v.dim().0, ..]).assign(v);
            off += v.dim().0;
        }
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(row_counts.len());
                let mut off = 0;
                for &r in &row_counts {
                    out.push(g.slice(s![off..off + r, ..]).to_owned());
                    off += r;
                }
                out
            })),
        )
    }

    /// Concatenates two equal-height blocks side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ar, br, "concat_cols: row counts differ");
        let mut value = Mat::zeros((ar, ac + bc));
        value.slice_mut(s![.., ..ac]).assign(self.value(a));
        value.slice_mut(s![.., ac..]).assign(self.value(b));
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(move |g, _, _| {
                vec![g.slice(s![.., ..ac]).to_owned(), g.slice(s![.., ac..]).to_owned()]
            })),
        )
    }

    /// Columns `[start, start + len)` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (_, c) = self.value(a).dim();
        assert!(start + len <= c, "slice_cols: [{start}, {}) outside {c} columns", start + len);
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, pv| {
                let mut gx = Mat::zeros(pv[0].dim());
                gx.slice_mut(s![.., start..start + len]).assign(g);
                vec![gx]
            })),
        )
    }

    /// Row `i` of `a` as a `1 x c` matrix.
    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let (r, _) = self.value(a).dim();
        assert!(i < r, "row: index {i} outside {r} rows");
        let value = self.value(a).slice(s![i..i + 1, ..]).to_owned();
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, pv| {
                let mut gx = Mat::zeros(pv[0].dim());
                gx.slice_mut(s![i..i + 1, ..]).assign(g);
                vec![gx]
            })),
        )
    }

    /// Row-by-row dot product of two `n x d` matrices, yielding `n x 1`.
    pub fn rowwise_dot(&mut self, a: Var, b: Var) -> Var {
        assert_same_shape(self.value(a), self.value(b), "rowwise_dot");
        let n = self.value(a).dim().0;
        let mut value = Mat::zeros((n, 1));
        for (i, (ra, rb)) in self.value(a).rows().into_iter().zip(self.value(b).rows()).enumerate()
        {
            value[(i, 0)] = ra.dot(&rb);
        }
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, pv| {
                let expand = |other: &Mat| {
                    let mut out = other.clone();
                    for (mut row, gr) in out.rows_mut().into_iter().zip(g.rows()) {
                        row.mapv_inplace(|v| v * gr[0]);
                    }
                    out
                };
                vec![expand(pv[1]), expand(pv[0])]
            })),
        )
    }

    /// Mean over all entries, as `1 x 1`.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).dim();
        let n = (r * c) as f64;
        let value = Mat::from_elem((1, 1), self.value(a).sum() / n);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, pv| vec![Mat::from_elem(pv[0].dim(), g[(0, 0)] / n)])),
        )
    }

    /// Reads `a` out row-major into a single `1 x (r·c)` row.
    pub fn flatten_row(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).dim();
        let value =
            Mat::from_shape_vec((1, r * c), self.value(a).iter().cloned().collect()).expect("flatten size");
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                vec![Mat::from_shape_vec((r, c), g.iter().cloned().collect()).expect("unflatten size")]
            })),
        )
    }

    /// Scales every row of `a` to unit L2 norm. Rows with norm below `1e-12`
    /// are rejected rather than divided by ~0.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        const FLOOR: f64 = 1e-12;
        let mut norms = Vec::with_capacity(self.value(a).dim().0);
        for (i, row) in self.value(a).rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm < FLOOR {
                return Err(NumericsError::ZeroNorm { row: i, norm, floor: FLOOR });
            }
            norms.push(norm);
        }
        let mut value = self.value(a).clone();
        for (mut row, &n) in value.rows_mut().into_iter().zip(&norms) {
            row.mapv_inplace(|v| v / n);
        }
        Ok(self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, y, _| {
                let mut gx = Mat::zeros(g.dim());
                for (i, ((grow, yrow), mut gxrow)) in
                    g.rows().into_iter().zip(y.rows()).zip(gx.rows_mut()).enumerate()
                {
                    let dot = grow.dot(&yrow);
                    ndarray::Zip::from(&mut gxrow).and(&grow).and(&yrow).for_each(|gx, &g, &y| {
                        *gx = (g - y * dot) / norms[i];
                    });
                }
                vec![gx]
            })),
        ))
    }

    /// Mean softmax cross-entropy of `n x k` logits against integer targets.
    /// Computed via a max-shifted log-sum-exp, so extreme logits stay finite.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (n, k) = self.value(logits).dim();
        assert_eq!(targets.len(), n, "cross_entropy_mean: {} targets for {n} rows", targets.len());
        assert!(targets.iter().all(|&t| t < k), "cross_entropy_mean: target class outside 0..{k}");
        let mut total = 0.0;
        let mut probs = self.value(logits).clone();
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[t];
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let value = Mat::from_elem((1, 1), total / n as f64);
        let targets = targets.to_vec();
        self.push(
            value,
            vec![logits.0],
            Some(Box::new(move |g, _, _| {
                let mut gx = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    gx[(i, t)] -= 1.0;
                }
                gx *= g[(0, 0)] / targets.len() as f64;
                vec![gx]
            })),
        )
    }

    /// Mean binary cross-entropy of logits against 0/1 targets, using the
    /// overflow-safe `max(z,0) - z·y + ln(1 + e^{-|z|})` form.
    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: &Mat) -> Var {
        assert_same_shape(self.value(logits), targets, "bce_with_logits_mean");
        let n = (targets.len()) as f64;
        let total: f64 = self
            .value(logits)
            .iter()
            .zip(targets.iter())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Mat::from_elem((1, 1), total / n);
        let targets = targets.clone();
        self.push(
            value,
            vec![logits.0],
            Some(Box::new(move |g, _, pv| {
                let gx = ndarray::Zip::from(pv[0]).and(&targets).map_collect(|&z, &y| {
                    let sig = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
                    g[(0, 0)] * (sig - y) / n
                });
                vec![gx]
            })),
        )
    }

    /// Mean squared error against a fixed target, averaged over all entries.
    pub fn squared_error_mean(&mut self, pred: Var, target: &Mat) -> Var {
        assert_same_shape(self.value(pred), target, "squared_error_mean");
        let n = target.len() as f64;
        let diff = self.value(pred) - target;
        let value = Mat::from_elem((1, 1), diff.iter().map(|d| d * d).sum::<f64>() / n);
        self.push(
            value,
            vec![pred.0],
            Some(Box::new(move |g, _, _| vec![&diff * (2.0 * g[(0, 0)] / n)])),
        )
    }

    /// Accumulates gradients of the scalar node `root` with respect to every
    /// input node, sweeping the tape in reverse creation order.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward requires a 1x1 scalar root");
        let dims: Vec<(usize, usize)> = self.nodes.iter().map(|n| n.value.dim()).collect();
        let mut grads: Vec<Option<Mat>> = self.nodes.iter().map(|_| None).collect();
        grads[root.0] = Some(Mat::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(bw) = &node.backward else {
                grads[i] = Some(g); // input node: keep for the caller
                continue;
            };
            let parent_values: Vec<&Mat> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let contributions = bw(&g, &node.value, &parent_values);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (&p, c) in node.parents.iter().zip(contributions) {
                match &mut grads[p] {
                    Some(acc) => *acc += &c,
                    slot => *slot = Some(c),
                }
            }
        }
        Gradients { grads, dims }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar(m: &Mat) -> f64 {
        assert_eq!(m.dim(), (1, 1));
        m[(0, 0)]
    }

    #[test]
    fn matmul_chain_gradient_matches_hand_derivation() {
        // loss = mean(A.B) with A = [[1,2],[3,4]], B = [[5],[6]]:
        // dloss/dA = [[5,6],[5,6]]/2, dloss/dB = [[4],[6]]/2.
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.leaf(array![[5.0], [6.0]]);
        let ab = t.matmul(a, b);
        let loss = t.mean_all(ab);
        let g = t.backward(loss);
        assert_eq!(scalar(t.value(loss)), (17.0 + 39.0) / 2.0);
        assert_eq!(g.wrt(a), array![[2.5, 3.0], [2.5, 3.0]]);
        assert_eq!(g.wrt(b), array![[2.0], [3.0]]);
    }

    #[test]
    fn branching_graph_accumulates_both_paths() {
        // loss = mean(x ⊙ x): dloss/dx = 2x / n.
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, -2.0, 3.0]]);
        let sq = t.mul(x, x);
        let loss = t.mean_all(sq);
        let g = t.backward(loss);
        assert_eq!(g.wrt(x), array![[2.0 / 3.0, -4.0 / 3.0, 2.0]]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0]]);
        let orphan = t.leaf(array![[9.0, 9.0]]);
        let loss = t.mean_all(x);
        let g = t.backward(loss);
        assert_eq!(g.wrt(orphan), Mat::zeros((1, 2)));
    }

    #[test]
    fn softmax_rows_are_stable_and_normalized() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1000.0, 1000.0, 999.0], [-1000.0, -1000.0, -1000.0]]);
        let y = t.softmax_rows(x);
        let v = t.value(y);
        for row in v.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| p.is_finite()));
        }
        assert!((v[(1, 0)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let mut t = Tape::new();
        let logits = t.leaf(Mat::zeros((4, 7)));
        let loss = t.cross_entropy_mean(logits, &[0, 3, 6, 2]);
        assert!((scalar(t.value(loss)) - (7.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_survives_extreme_logits() {
        let mut t = Tape::new();
        let logits = t.leaf(array![[800.0, -800.0], [-800.0, 800.0]]);
        let loss = t.cross_entropy_mean(logits, &[0, 1]);
        let v = scalar(t.value(loss));
        assert!(v.is_finite());
        assert!(v >= 0.0 && v < 1e-12);
        let g = t.backward(loss);
        assert!(g.wrt(logits).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn dropout_masks_scale_survivors() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::ones((16, 16)));
        let mut rng = crate::rng::stream_rng(0, 0);
        let y = t.dropout(x, 0.25, &mut rng);
        let v = t.value(y);
        let kept = v.iter().filter(|&&e| e != 0.0).count();
        assert!(v.iter().all(|&e| e == 0.0 || (e - 4.0 / 3.0).abs() < 1e-15));
        assert!(kept > 128 && kept < 256, "kept {kept} of 256 at p=0.25");
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]]);
        let mut rng = crate::rng::stream_rng(0, 0);
        let y = t.dropout(x, 0.0, &mut rng);
        assert_eq!(x, y);
    }

    #[test]
    fn flatten_row_is_row_major() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let f = t.flatten_row(x);
        assert_eq!(t.value(f), &array![[1.0, 2.0, 3.0, 4.0]]);
    }

    #[test]
    fn stack_rows_round_trips_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        let b = t.leaf(array![[3.0, 4.0], [5.0, 6.0]]);
        let st = t.stack_rows(&[a, b]);
        assert_eq!(t.value(st).dim(), (3, 2));
        let row1 = t.row(st, 1);
        let loss = t.mean_all(row1);
        let g = t.backward(loss);
        assert_eq!(g.wrt(a), Mat::zeros((1, 2)));
        assert_eq!(g.wrt(b), array![[0.5, 0.5], [0.0, 0.0]]);
    }

    #[test]
    fn l2_normalize_rejects_zero_rows() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 0.0], [0.0, 0.0]]);
        match t.l2_normalize_rows(x) {
            Err(NumericsError::ZeroNorm { row: 1, .. }) => {}
            other => panic!("expected ZeroNorm for row 1, got {other:?}"),
        }
    }

    #[test]
    fn l2_normalize_produces_unit_rows() {
        let mut t = Tape::new();
        let x = t.leaf(array![[3.0, 4.0], [-5.0, 12.0]]);
        let y = t.l2_normalize_rows(x).unwrap();
        for row in t.value(y).rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_with_logits_matches_direct_formula_on_moderate_inputs() {
        let mut t = Tape::new();
        let z = t.leaf(array![[0.5, -1.0]]);
        let y = array![[1.0, 0.0]];
        let loss = t.bce_with_logits_mean(z, &y);
        let direct = (-(sigmoid(0.5)).ln() - (1.0 - sigmoid(-1.0)).ln()) / 2.0;
        assert!((scalar(t.value(loss)) - direct).abs() < 1e-12);

        fn sigmoid(z: f64) -> f64 {
            1.0 / (1.0 + (-z).exp())
        }
    }

    #[test]
    fn pooling_ops_reject_oversized_windows() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::zeros((4, 4)));
        assert!(t.avg_pool2d(x, 5, 1).is_err());
        assert!(t.max_pool2d(x, 5, 1).is_err());
        assert!(super::super::matrix::pooled_shape((4, 4), 4, 1).is_ok());
    }
}
