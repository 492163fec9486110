//! Plain (non-differentiated) matrix helpers shared by the tape ops and by
//! evaluation-only code paths.

use thiserror::Error;

/// Dense row-major f64 matrix. All model state and activations use this type.
pub type Mat = ndarray::Array2<f64>;

/// Errors from data-dependent matrix operations.
///
/// Shape mistakes that can only arise from caller bugs (e.g. mismatched
/// operand shapes in an elementwise op) panic instead; these variants cover
/// conditions that depend on runtime data such as corpus dimensions.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{k}x{k} pooling window does not fit a {rows}x{cols} input")]
    WindowTooLarge { k: usize, rows: usize, cols: usize },
    #[error("pooling stride must be positive")]
    ZeroStride,
    #[error("cannot L2-normalize row {row}: norm {norm:.3e} is below {floor:.3e}")]
    ZeroNorm { row: usize, norm: f64, floor: f64 },
}

/// Output shape of a square `k`-window pooling with stride `s` over an
/// `(rows, cols)` input: `floor((n - k) / s) + 1` per side. Windows that
/// would extend past the input are discarded, never padded.
pub fn pooled_shape(
    (rows, cols): (usize, usize),
    k: usize,
    s: usize,
) -> Result<(usize, usize), NumericsError> {
    if s == 0 {
        return Err(NumericsError::ZeroStride);
    }
    if k == 0 || k > rows || k > cols {
        return Err(NumericsError::WindowTooLarge { k, rows, cols });
    }
    Ok(((rows - k) / s + 1, (cols - k) / s + 1))
}

/// Mean over each `k`x`k` window, stride `s`, partial windows discarded.
pub fn avg_pool(input: &Mat, k: usize, s: usize) -> Result<Mat, NumericsError> {
    let (out_r, out_c) = pooled_shape(input.dim(), k, s)?;
    let denom = (k * k) as f64;
    let mut out = Mat::zeros((out_r, out_c));
    for i in 0..out_r {
        for j in 0..out_c {
            let mut sum = 0.0;
            for di in 0..k {
                for dj in 0..k {
                    sum += input[(i * s + di, j * s + dj)];
                }
            }
            out[(i, j)] = sum / denom;
        }
    }
    Ok(out)
}

/// Maximum over each `k`x`k` window, stride `s`, partial windows discarded.
pub fn max_pool(input: &Mat, k: usize, s: usize) -> Result<Mat, NumericsError> {
    Ok(max_pool_with_argmax(input, k, s)?.0)
}

/// Max pooling that also reports, per output cell, the input coordinate of
/// the maximum. Ties resolve to the first maximal element in row-major scan
/// order within the window; the backward pass routes the whole gradient of a
/// cell to its recorded coordinate.
pub(crate) fn max_pool_with_argmax(
    input: &Mat,
    k: usize,
    s: usize,
) -> Result<(Mat, Vec<(usize, usize)>), NumericsError> {
    let (out_r, out_c) = pooled_shape(input.dim(), k, s)?;
    let mut out = Mat::zeros((out_r, out_c));
    let mut argmax = Vec::with_capacity(out_r * out_c);
    for i in 0..out_r {
        for j in 0..out_c {
            let mut best = f64::NEG_INFINITY;
            let mut best_at = (i * s, j * s);
            for di in 0..k {
                for dj in 0..k {
                    let at = (i * s + di, j * s + dj);
                    let v = input[at];
                    if v > best {
                        best = v;
                        best_at = at;
                    }
                }
            }
            out[(i, j)] = best;
            argmax.push(best_at);
        }
    }
    Ok((out, argmax))
}
