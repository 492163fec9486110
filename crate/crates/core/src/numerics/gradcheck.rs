//! Central-difference validation of the tape's analytic gradients.

use super::matrix::Mat;
use super::tape::{Tape, Var};

/// Outcome of a [`grad_check`] sweep.
#[derive(Debug)]
pub struct GradCheckReport {
    /// Largest relative error over every entry of every parameter.
    pub max_rel_error: f64,
    /// Index (into the params slice) and entry where the worst error occurred.
    pub worst_param: usize,
    pub worst_entry: (usize, usize),
    /// Analytic and numeric gradient at the worst entry.
    pub analytic: f64,
    pub numeric: f64,
    /// Total number of entries compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares the tape's gradients against central differences.
///
/// `build` must construct the same scalar loss from the given leaves every
/// time it is called (in particular it must not consume external randomness;
/// fix any dropout masks as constants first). Every parameter entry is
/// perturbed by `±step` and the numeric slope `(f⁺ − f⁻) / 2·step` is compared
/// to the analytic gradient with relative error
/// `|a − n| / max(|a|, |n|, 1e-5)`.
///
/// The denominator floor makes the criterion mixed absolute/relative: a
/// structurally zero gradient (e.g. a key-projection bias, which cancels in
/// the attention softmax) evaluates numerically to pure cancellation noise of
/// order ε/step ≈ 1e-11, and dividing that by itself would report an error of
/// 1 where both sides are in fact zero. Below the floor, entries are compared
/// with an effective absolute tolerance of `tol × 1e-5` instead — still far
/// tighter than any real gradient defect.
///
/// Cost is two full forwards per parameter entry — keep the test problems
/// small.
pub fn grad_check<F>(params: &[Mat], build: F, step: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |ps: &[Mat]| -> (Tape, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        (tape, loss, vars)
    };

    let (tape, loss, vars) = eval(params);
    let analytic: Vec<Mat> = {
        let grads = tape.backward(loss);
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_entry: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Mat> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ((r, c), _) in param.indexed_iter() {
            let original = work[pi][(r, c)];
            work[pi][(r, c)] = original + step;
            let f_plus = {
                let (t, l, _) = eval(&work);
                t.value(l)[(0, 0)]
            };
            work[pi][(r, c)] = original - step;
            let f_minus = {
                let (t, l, _) = eval(&work);
                t.value(l)[(0, 0)]
            };
            work[pi][(r, c)] = original;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[pi][(r, c)];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = pi;
                report.worst_entry = (r, c);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_gradient_is_reproduced() {
        let params = vec![array![[0.3, -0.7], [1.1, 0.2]]];
        let report = grad_check(
            &params,
            |t, vars| {
                let target = array![[1.0, 1.0], [1.0, 1.0]];
                t.squared_error_mean(vars[0], &target)
            },
            1e-5,
        );
        assert_eq!(report.checked, 4);
        assert!(report.passes(1e-8), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn deliberately_scaled_loss_still_checks_out() {
        // Mixing several ops: loss = mean( (x.w) ⊙ (x.w) ) * 3.
        let params = vec![array![[0.5], [-0.25]]];
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let report = grad_check(
            &params,
            move |t, vars| {
                let xc = t.constant(x.clone());
                let xw = t.matmul(xc, vars[0]);
                let sq = t.mul(xw, xw);
                let m = t.mean_all(sq);
                t.scale(m, 3.0)
            },
            1e-5,
        );
        assert!(report.passes(1e-9), "max rel error {}", report.max_rel_error);
    }
}
