use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One bias-corrected update of `param` in place.
    pub fn step(&self, param: &mut Tensor, grad: &Tensor, state: &mut AdamState) {
        assert_eq!(
            param.shape(),
            grad.shape(),
            "adam_step: shape mismatch {:?} vs {:?}",
            param.shape(),
            grad.shape()
        );
        assert_eq!(state.m.len(), param.len(), "adam_step: state does not match parameter");
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in param.data_mut().iter_mut().enumerate() {
            let g = grad.data()[i] + self.weight_decay * *p;
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = state.m[i] / c1;
            let vhat = state.v[i] / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
