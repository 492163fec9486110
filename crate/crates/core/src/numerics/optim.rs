//! First-order optimizers over flat lists of parameter matrices.
//!
//! The caller owns parameter storage and presents the tensors in a fixed
//! order on every step; moment buffers are index-aligned with that order.

use super::matrix::Mat;

/// Update rule selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// `θ ← θ − lr·g`.
    Sgd,
    /// Bias-corrected Adam: first/second moment averages with decay rates
    /// `beta1`/`beta2` and denominator floor `eps`.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Stateful optimizer. Construct once per training run and call
/// [`Optimizer::step`] with gradients in the same parameter order each time.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    warmup_steps: usize,
    steps_taken: usize,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay: 0.0,
            warmup_steps: 0,
            steps_taken: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Adam with the conventional decay rates (β1 = 0.9, β2 = 0.999,
    /// ε = 1e-8), decoupled weight decay, and a linear learning-rate warmup
    /// over `warmup_steps` optimizer steps (0 disables warmup).
    pub fn adam(lr: f64, weight_decay: f64, warmup_steps: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            lr,
            weight_decay,
            warmup_steps,
            steps_taken: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Learning rate the *next* step will use: `lr · min(1, (t+1)/W)` where
    /// `t` is the number of steps already taken. The very first step under
    /// warmup therefore uses `lr/W`, not zero.
    pub fn effective_lr(&self) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        self.lr * 1.0f64.min((self.steps_taken + 1) as f64 / self.warmup_steps as f64)
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Applies one update. `params` and `grads` must be index-aligned and
    /// shape-aligned with every previous call.
    pub fn step(&mut self, params: &mut [&mut Mat], grads: &[Mat]) {
        assert_eq!(params.len(), grads.len(), "optimizer step: {} params, {} grads", params.len(), grads.len());
        let lr_eff = self.effective_lr();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    assert_eq!(p.dim(), g.dim(), "optimizer step: param/grad shape mismatch");
                    **p -= &(g * lr_eff);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| Mat::zeros(g.dim())).collect();
                    self.v = grads.iter().map(|g| Mat::zeros(g.dim())).collect();
                }
                let t = (self.steps_taken + 1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    assert_eq!(p.dim(), g.dim(), "optimizer step: param/grad shape mismatch");
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
                    v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
                    ndarray::Zip::from(&mut **p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        *p -= lr_eff * (m / bc1) / ((v / bc2).sqrt() + eps);
                    });
                }
            }
        }
        // Decoupled weight decay: shrink parameters directly, scaled by the
        // same effective learning rate, independent of the gradient path.
        if self.weight_decay > 0.0 {
            let shrink = lr_eff * self.weight_decay;
            for p in params.iter_mut() {
                p.mapv_inplace(|x| x - shrink * x);
            }
        }
        self.steps_taken += 1;
    }
}
