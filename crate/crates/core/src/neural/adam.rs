//! Adam with decoupled weight decay.

use ndarray::{Array1, Array2, Zip};

use super::{NetworkParams, ParamGrads};
use crate::error::{FinnError, Result};

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr: f64, weight_decay: f64) -> Self {
        let z = ParamGrads::zeros_like(params);
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: z.weights.clone(),
            v_w: z.weights,
            m_b: z.biases.clone(),
            v_b: z.biases,
        }
    }

    /// `theta -= lr * wd * theta`, then `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &ParamGrads) -> Result<()> {
        let shapes_ok = grads.weights.len() == self.m_w.len()
            && params.weights.len() == self.m_w.len()
            && grads
                .weights
                .iter()
                .zip(&self.m_w)
                .zip(&params.weights)
                .all(|((g, m), p)| g.dim() == m.dim() && p.dim() == m.dim())
            && grads
                .biases
                .iter()
                .zip(&self.m_b)
                .zip(&params.biases)
                .all(|((g, m), p)| g.dim() == m.dim() && p.dim() == m.dim());
        if !shapes_ok {
            return Err(FinnError::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, wd, eps) = (self.beta1, self.beta2, self.lr, self.weight_decay, self.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * wd * *p;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for l in 0..params.weights.len() {
            Zip::from(&mut params.weights[l])
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .and(&grads.weights[l])
                .for_each(update);
            Zip::from(&mut params.biases[l])
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .and(&grads.biases[l])
                .for_each(update);
        }
        Ok(())
    }
}
