//! Central-difference validation for every differentiable operation, alone
//! and composed. Smooth paths must agree to 1e-6 relative error; paths with
//! kinks (ReLU, max pooling) to 1e-4, with inputs placed away from the kinks
//! so the finite differences do not straddle them.

use ndarray::array;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scenelearn::numerics::{grad_check, Mat};
use scenelearn::rng::stream_rng;

const SMOOTH_TOL: f64 = 1e-6;
const KINKED_TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn elementwise_and_affine_ops() {
    let mut rng = stream_rng(11, 0);
    let params = vec![rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 3, 4), rand_mat(&mut rng, 1, 4)];
    let report = grad_check(
        &params,
        |t, v| {
            let sum = t.add(v[0], v[1]);
            let diff = t.sub(v[0], v[1]);
            let prod = t.mul(sum, diff);
            let scaled = t.scale(prod, -0.37);
            let biased = t.add_row(scaled, v[2]);
            t.mean_all(biased)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn matmul_transpose_flatten() {
    let mut rng = stream_rng(12, 0);
    let params = vec![rand_mat(&mut rng, 3, 5), rand_mat(&mut rng, 3, 4)];
    let report = grad_check(
        &params,
        |t, v| {
            let at = t.transpose(v[0]); // 5x3
            let prod = t.matmul(at, v[1]); // 5x4
            let flat = t.flatten_row(prod);
            let sq = t.mul(flat, flat);
            t.mean_all(sq)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn relu_with_margin_off_the_kink() {
    let mut rng = stream_rng(13, 0);
    let x = rand_mat(&mut rng, 4, 6);
    let margin = x.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    assert!(margin > 10.0 * STEP, "inputs too close to the ReLU kink: {margin}");
    let report = grad_check(
        &[x],
        |t, v| {
            let r = t.relu(v[0]);
            let sq = t.mul(r, r);
            t.mean_all(sq)
        },
        STEP,
    );
    assert!(report.passes(KINKED_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn gelu_everywhere_including_near_zero() {
    let params = vec![array![[-2.0, -0.5, -0.01, 0.0, 0.01, 0.5, 2.0, 10.0]]];
    let report = grad_check(
        &params,
        |t, v| {
            let g = t.gelu(v[0]);
            t.mean_all(g)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn softmax_and_cross_entropy() {
    let mut rng = stream_rng(14, 0);
    let params = vec![rand_mat(&mut rng, 5, 7)];
    let report = grad_check(
        &params,
        |t, v| {
            let scaled = t.scale(v[0], 3.0);
            t.cross_entropy_mean(scaled, &[0, 6, 3, 3, 1])
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);

    let mut rng = stream_rng(14, 1);
    let params = vec![rand_mat(&mut rng, 4, 5)];
    let report = grad_check(
        &params,
        |t, v| {
            let sm = t.softmax_rows(v[0]);
            let sq = t.mul(sm, sm);
            t.mean_all(sq)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn layer_norm_rows_full_parameter_set() {
    let mut rng = stream_rng(15, 0);
    let params =
        vec![rand_mat(&mut rng, 4, 6), rand_mat(&mut rng, 1, 6), rand_mat(&mut rng, 1, 6)];
    let report = grad_check(
        &params,
        |t, v| {
            let ln = t.layer_norm_rows(v[0], v[1], v[2], 1e-5);
            let sq = t.mul(ln, ln);
            t.mean_all(sq)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn avg_pool_overlapping_windows() {
    let mut rng = stream_rng(16, 0);
    let params = vec![rand_mat(&mut rng, 7, 7)];
    let report = grad_check(
        &params,
        |t, v| {
            let p = t.avg_pool2d(v[0], 3, 2).unwrap();
            let sq = t.mul(p, p);
            t.mean_all(sq)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn max_pool_with_clear_winners() {
    let mut rng = stream_rng(17, 0);
    let x = rand_mat(&mut rng, 6, 6);
    // Verify every 2x2-stride-2 window has a clear argmax before checking.
    for wi in 0..3 {
        for wj in 0..3 {
            let mut vals: Vec<f64> = (0..2)
                .flat_map(|di| (0..2).map(move |dj| (di, dj)))
                .map(|(di, dj)| x[(wi * 2 + di, wj * 2 + dj)])
                .collect();
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!(vals[0] - vals[1] > 10.0 * STEP, "near-tie in window ({wi},{wj})");
        }
    }
    let report = grad_check(
        &[x],
        |t, v| {
            let p = t.max_pool2d(v[0], 2, 2).unwrap();
            let sq = t.mul(p, p);
            t.mean_all(sq)
        },
        STEP,
    );
    assert!(report.passes(KINKED_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn stacking_slicing_and_rowwise_products() {
    let mut rng = stream_rng(18, 0);
    let params = vec![
        rand_mat(&mut rng, 2, 6),
        rand_mat(&mut rng, 3, 6),
        rand_mat(&mut rng, 5, 3),
    ];
    let report = grad_check(
        &params,
        |t, v| {
            let stacked = t.stack_rows(&[v[0], v[1]]); // 5x6
            let left = t.slice_cols(stacked, 0, 3);
            let right = t.slice_cols(stacked, 3, 3);
            let wide = t.concat_cols(right, left); // 5x6 permuted
            let half = t.slice_cols(wide, 0, 3);
            let dots = t.rowwise_dot(half, v[2]); // 5x1
            let first = t.row(dots, 2);
            let m = t.mean_all(dots);
            let f = t.mean_all(first);
            let s = t.add(m, f);
            t.scale(s, 0.5)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn l2_normalize_rows_gradient() {
    let mut rng = stream_rng(19, 0);
    let params = vec![rand_mat(&mut rng, 3, 5), rand_mat(&mut rng, 3, 5)];
    let report = grad_check(
        &params,
        |t, v| {
            let q = t.l2_normalize_rows(v[0]).unwrap();
            let k = t.l2_normalize_rows(v[1]).unwrap();
            let sims = t.rowwise_dot(q, k);
            t.mean_all(sims)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}

#[test]
fn binary_cross_entropy_and_squared_error() {
    let mut rng = stream_rng(20, 0);
    let targets = Mat::from_shape_fn((4, 3), |_| if rng.gen::<bool>() { 1.0 } else { 0.0 });
    let params = vec![rand_mat(&mut rng, 4, 3)];
    let t1 = targets.clone();
    let report = grad_check(&params, move |t, v| t.bce_with_logits_mean(v[0], &t1), STEP);
    assert!(report.passes(SMOOTH_TOL), "bce rel error {}", report.max_rel_error);

    // The loss is quadratic, so central differences carry no truncation
    // error; a larger step just suppresses floating-point cancellation on
    // entries whose gradient happens to be tiny.
    let goal = rand_mat(&mut rng, 4, 3);
    let report = grad_check(&params, move |t, v| t.squared_error_mean(v[0], &goal), 1e-3);
    assert!(report.passes(SMOOTH_TOL), "mse rel error {}", report.max_rel_error);
}

#[test]
fn dropout_with_frozen_mask_backpropagates_through_survivors() {
    // Dropout is a masked elementwise product; freeze one mask and check it.
    let mut rng = stream_rng(21, 0);
    let mask = Mat::from_shape_fn((4, 4), |_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 2.0 });
    let params = vec![rand_mat(&mut rng, 4, 4)];
    let report = grad_check(
        &params,
        move |t, v| {
            let m = t.constant(mask.clone());
            let dropped = t.mul(v[0], m);
            let sq = t.mul(dropped, dropped);
            t.mean_all(sq)
        },
        STEP,
    );
    assert!(report.passes(SMOOTH_TOL), "rel error {}", report.max_rel_error);
}
